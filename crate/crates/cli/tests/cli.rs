use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
schema_version = 1
seed = 1
kappa = 1
gamma = 0.9
iterations = 5
horizon = 20
batch = 2
eta_theta = 0.05
eta_mu = 10.0

[env]
name = "synthetic_line"
n = 3

[objective]
kind = "env_reward"

[constraint]
kind = "entropy"
threshold = 0.4
"#;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safemarl")).args(args).current_dir(cwd).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_is_deterministic_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for out in ["a", "b", "c"] {
        let seed = if out == "c" { "2" } else { "1" };
        let o = bin(&["run", "--config", &cfg, "--seed", seed, "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &str| fs::read(dir.path().join(d).join("metrics.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn default_output_directory_uses_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = bin(&["run", "--config", &cfg], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("runs/seed1/manifest.json").exists());
}

#[test]
fn config_errors_exit_one_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("batch = 2", "batch = 2\nbatchsize = 3"));
    let o = bin(&["run", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("batchsize"));

    let cfg = write_config(dir.path(), &SMALL.replace("gamma = 0.9", "gamma = 1.5"));
    assert_eq!(bin(&["run", "--config", &cfg], dir.path()).status.code(), Some(1));

    let o = bin(&["run", "--config", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_over_kappa_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = bin(&["sweep", "--config", &cfg, "--axis", "kappa", "--values", "0,1,2", "--out", "sw"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(dir.path().join("sw/summary.csv")).unwrap();
    assert!(summary.starts_with("kappa,replicate,seed,"));
    assert_eq!(summary.lines().count(), 1 + 3 + 3);
}

#[test]
fn sweep_with_empty_values_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = bin(&["sweep", "--config", &cfg, "--axis", "eta_mu", "--values", ""], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn sweep_threshold_accepts_negative_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = bin(&["sweep", "--config", &cfg, "--axis", "threshold", "--values", "-0.1,0.2", "--parallel"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("runs/sweep-threshold/threshold=-0.1/rep0/metrics.csv").exists());
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["verify"], dir.path());
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("10/10 checks passed"), "{out}");
}
