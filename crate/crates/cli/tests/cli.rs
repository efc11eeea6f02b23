//! End-to-end checks of the binary: exit codes, file layout, determinism.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_bexplore");

const TINY: &str = r#"
name = "tiny"
seeds = [0, 1, 2]

[env]
kind = "unichain"
length = 8

[agent]
kind = "ppo"
[agent.config]
hidden = [8]

[planner]
total_steps = 40
warmup_steps = 4
policy_period = 16
model_period = 16
mode = "vanilla"
policy_epochs = 1
"#;

fn bexplore(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("BEXPLORE_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn validate_accepts_a_well_formed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let out = bexplore(&["validate", &config], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn validate_reports_config_errors_on_stderr_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &TINY.replace("[0, 1, 2]", "[1, 1]"));
    let out = bexplore(&["validate", &config], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config.toml"), "stderr: {stderr}");
    assert!(stderr.contains("seeds"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bexplore(&["run", "nope.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn run_writes_traces_and_aggregate_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let out = bexplore(&["run", &config, "--out", "results", "--jobs", "2"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("results/tiny");
    for name in [
        "config.toml",
        "meta.toml",
        "trace_seed0.csv",
        "trace_seed1.csv",
        "trace_seed2.csv",
        "aggregate.csv",
        "summary.csv",
    ] {
        assert!(dir.join(name).exists(), "{name} missing");
    }
    let before = std::fs::read_to_string(dir.join("trace_seed1.csv")).unwrap();
    let again = bexplore(&["run", &config, "--out", "results"], tmp.path());
    assert!(again.status.success());
    let after = std::fs::read_to_string(dir.join("trace_seed1.csv")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn report_rebuilds_the_aggregate_from_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    assert!(bexplore(&["run", &config, "--out", "results"], tmp.path())
        .status
        .success());
    let dir = tmp.path().join("results/tiny");
    let original = std::fs::read_to_string(dir.join("aggregate.csv")).unwrap();
    std::fs::remove_file(dir.join("aggregate.csv")).unwrap();
    let out = bexplore(&["report", dir.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rebuilt = std::fs::read_to_string(dir.join("aggregate.csv")).unwrap();
    assert_eq!(original, rebuilt);
}

#[test]
fn report_on_a_directory_without_traces_fails_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bexplore(&["report", "."], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_runs_each_value_into_its_own_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &TINY.replace("[0, 1, 2]", "[0]"));
    let out = bexplore(
        &[
            "sweep",
            &config,
            "--vary",
            "planner.total_steps=24,32",
            "--out",
            "results",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("results/tiny_total_steps=24/trace_seed0.csv").exists());
    assert!(tmp.path().join("results/tiny_total_steps=32/trace_seed0.csv").exists());
}

#[test]
fn malformed_vary_argument_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let out = bexplore(&["sweep", &config, "--vary", "no-equals"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_offset_renames_trace_files() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &TINY.replace("[0, 1, 2]", "[0]"));
    let out = bexplore(
        &[
            "run",
            &config,
            "--out",
            "results",
            "--seed-offset",
            "100",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    assert!(tmp
        .path()
        .join("results/tiny/trace_seed100.csv")
        .exists());
}

#[test]
fn out_env_var_sets_the_default_root() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &TINY.replace("[0, 1, 2]", "[0]"));
    let out = Command::new(BIN)
        .args(["run", &config])
        .current_dir(tmp.path())
        .env("BEXPLORE_OUT", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("from_env/tiny/trace_seed0.csv").exists());
}
