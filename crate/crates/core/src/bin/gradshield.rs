use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gradshield::harness::verify::{run_all, write_outputs, Scale};
use gradshield::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use gradshield::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "gradshield", version, about = "Selective gradient encryption privacy lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output base directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace a finished run with the same config hash.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconstruction bound against the encryption ratio.
    BoundCurve(RunArgs),
    /// Gradient inversion attacks against the defense, with the bound alongside.
    AttackSweep(RunArgs),
    /// Federated training at several fixed noise levels.
    NoiseUtility(RunArgs),
    /// Federated training with the adaptive noise schedule.
    AdaptiveTrain(RunArgs),
    /// Monte Carlo check of the Gaussian norm tail bound.
    Concentration(RunArgs),
    /// First-order descent fractions around the critical noise.
    Descent(RunArgs),
    /// Run the acceptance checks.
    Verify {
        /// Reduced trial counts.
        #[arg(long)]
        quick: bool,
        /// Directory for verify.csv and per-check tables.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if cfg.kind != kind {
        return Err(Error::Validation {
            field: "kind".into(),
            message: format!(
                "config {} describes `{}`, not `{}`",
                args.config.display(),
                cfg.kind.name(),
                kind.name()
            ),
        });
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out = out;
    }
    let dir = run_experiment(&cfg, args.force)?;
    println!("{}", dir.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Validation { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("GRADSHIELD_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.parse().map_err(|_| Error::Validation {
        field: "GRADSHIELD_THREADS".into(),
        message: format!("expected a positive integer, got {value:?}"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    let result = match cli.command {
        Command::BoundCurve(a) => run(ExperimentKind::BoundCurve, a),
        Command::AttackSweep(a) => run(ExperimentKind::AttackSweep, a),
        Command::NoiseUtility(a) => run(ExperimentKind::NoiseUtility, a),
        Command::AdaptiveTrain(a) => run(ExperimentKind::AdaptiveTrain, a),
        Command::Concentration(a) => run(ExperimentKind::Concentration, a),
        Command::Descent(a) => run(ExperimentKind::Descent, a),
        Command::Verify { quick, out } => {
            let outcomes = run_all(if quick { Scale::Quick } else { Scale::Full });
            for o in &outcomes {
                println!("{}", o.line());
            }
            if let Some(dir) = out {
                if let Err(e) = write_outputs(&outcomes, &dir) {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit_code(&e));
                }
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
            return ExitCode::from(if failed == 0 { 0 } else { EXIT_RUNTIME });
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
