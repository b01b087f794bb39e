//! All twelve acceptance criteria at full scale, one line per criterion.
//! Exits nonzero when any criterion fails.

use std::process::ExitCode;

use gradshield::harness::verify::{run_all, Scale, CRITERIA};

fn main() -> ExitCode {
    let outcomes = run_all(Scale::Full);
    assert_eq!(outcomes.len(), CRITERIA);
    println!();
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
    println!(
        "\nacceptance: {} of {CRITERIA} criteria passed{}\n",
        CRITERIA - failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
