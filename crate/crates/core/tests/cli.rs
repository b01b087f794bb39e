use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gradshield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradshield"))
        .args(args)
        .env("GRADSHIELD_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.conf");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&gradshield(&[])), 1);
    assert_eq!(code(&gradshield(&["no-such-kind"])), 1);
    assert_eq!(code(&gradshield(&["bound-curve"])), 1);
    assert_eq!(code(&gradshield(&["--help"])), 0);
    assert_eq!(code(&gradshield(&["--version"])), 0);
}

#[test]
fn config_problems_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_string_lossy().into_owned();
    let bad_key = write_config(tmp.path(), "kind = bound-curve\n[defense]\nsigam = 0.1\n");
    let run = gradshield(&["bound-curve", "--config", &bad_key, "--out", &out]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("did you mean \"sigma\""));

    let bad_z = write_config(tmp.path(), "kind = bound-curve\n[grid]\nz = 0, 1.5\n");
    let run = gradshield(&["bound-curve", "--config", &bad_z, "--out", &out]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("grid.z"));

    let other_kind = write_config(tmp.path(), "kind = descent\n");
    assert_eq!(code(&gradshield(&["bound-curve", "--config", &other_kind, "--out", &out])), 2);
}

#[test]
fn rerun_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs").to_string_lossy().into_owned();
    let config = write_config(
        tmp.path(),
        "kind = bound-curve\nname = cli\nmodel = small\n[data]\ncount = 4\n[grid]\nz = 0, 0.5\n",
    );
    let args = ["bound-curve", "--config", config.as_str(), "--out", out.as_str()];
    let first = gradshield(&args);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let dir = String::from_utf8_lossy(&first.stdout).trim().to_owned();
    assert!(Path::new(&dir).join("bounds.csv").exists());

    let again = gradshield(&args);
    assert_eq!(code(&again), 3);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&gradshield(&forced)), 0);

    // A different seed is a different config hash, hence a different directory.
    let mut reseeded = args.to_vec();
    reseeded.extend(["--seed", "7"]);
    let other = gradshield(&reseeded);
    assert_eq!(code(&other), 0);
    assert_ne!(String::from_utf8_lossy(&other.stdout).trim(), dir);
}

#[test]
fn missing_config_file_is_a_runtime_error() {
    let run = gradshield(&["descent", "--config", "/nonexistent/exp.conf"]);
    assert_eq!(code(&run), 3);
}

#[test]
fn bad_thread_count_is_rejected() {
    let run = Command::new(env!("CARGO_BIN_EXE_gradshield"))
        .args(["verify", "--quick"])
        .env("GRADSHIELD_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&run), 2);
}
