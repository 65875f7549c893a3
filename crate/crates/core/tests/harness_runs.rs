use std::fs;

use safemarl::config::ExperimentConfig;
use safemarl::harness::{self, content_hash, SweepAxis};
use safemarl::train::initial_policy;

const SMALL: &str = r#"
schema_version = 1
seed = 3
kappa = 1
gamma = 0.9
iterations = 6
horizon = 20
batch = 2
eta_theta = 0.05
eta_mu = 10.0
oracle_every = 3
init_logits = [0.5, -0.5]

[env]
name = "synthetic_line"
n = 3

[objective]
kind = "env_reward"

[constraint]
kind = "entropy"
threshold = 0.4

[td]
steps = 200
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::parse(SMALL).unwrap()
}

#[test]
fn zero_iterations_write_header_and_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.iterations = 0;
    let s = harness::run(&cfg, dir.path()).unwrap();
    assert!(s.state.history.is_empty());
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics, format!("{}\n", harness::metrics_header(3)));

    let cmdp = cfg.build_env().unwrap();
    let init = initial_policy(&cmdp, &cfg.train_config()).unwrap();
    let mut expected = Vec::new();
    init.write_checkpoint(&mut expected).unwrap();
    assert_eq!(fs::read(dir.path().join("policy.csv")).unwrap(), expected);
}

#[test]
fn manifest_records_hashes_and_progress() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    harness::run(&cfg, dir.path()).unwrap();
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    let metrics = fs::read(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(manifest["metrics_hash"], content_hash(&metrics));
    assert_eq!(manifest["config_hash"], content_hash(cfg.to_toml().as_bytes()));
    assert_eq!(manifest["iterations_completed"], 6);
    assert_eq!(manifest["seed"], 3);
    let reparsed = ExperimentConfig::parse(manifest["config_toml"].as_str().unwrap()).unwrap();
    assert_eq!(reparsed, cfg);
}

#[test]
fn metric_rows_label_their_source() {
    let dir = tempfile::tempdir().unwrap();
    harness::run(&small(), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let sources: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(sources, ["oracle", "plugin", "plugin", "oracle", "plugin", "plugin"]);
    let timing = fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 7);
}

#[test]
fn checkpoint_reloads_to_final_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let s = harness::run(&cfg, dir.path()).unwrap();
    let file = fs::File::open(dir.path().join("policy.csv")).unwrap();
    let loaded = s.state.policy.read_checkpoint(std::io::BufReader::new(file)).unwrap();
    assert_eq!(loaded.thetas(), s.state.policy.thetas());
}

#[test]
fn kappa_sweep_writes_summary_with_medians() {
    let dir = tempfile::tempdir().unwrap();
    let rows = harness::sweep(&small(), SweepAxis::Kappa, &[0.0, 1.0, 2.0], 2, dir.path(), true).unwrap();
    assert_eq!(rows.len(), 6);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], harness::summary_header(SweepAxis::Kappa));
    assert_eq!(lines.iter().filter(|l| l.contains(",median,")).count(), 3);
    for v in ["0", "1", "2"] {
        for r in 0..2 {
            assert!(dir.path().join(format!("kappa={v}/rep{r}/metrics.csv")).exists());
        }
    }
    let seq = harness::sweep(&small(), SweepAxis::Kappa, &[0.0, 1.0, 2.0], 2, &dir.path().join("seq"), false).unwrap();
    assert_eq!(seq.iter().map(|r| r.final_return).collect::<Vec<_>>(), rows.iter().map(|r| r.final_return).collect::<Vec<_>>());
}

#[test]
fn replicates_share_seeds_across_values() {
    let dir = tempfile::tempdir().unwrap();
    let rows = harness::sweep(&small(), SweepAxis::EtaMu, &[0.0, 5.0], 2, dir.path(), false).unwrap();
    assert_eq!(rows[0].seed, rows[2].seed);
    assert_eq!(rows[1].seed, rows[3].seed);
    assert_ne!(rows[0].seed, rows[1].seed);
}

#[test]
fn sweep_rejects_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    assert!(harness::parse_values(" , ").is_err());
    assert!(harness::sweep(&small(), SweepAxis::Kappa, &[], 1, dir.path(), false).is_err());
    assert!(harness::sweep(&small(), SweepAxis::Kappa, &[1.5], 1, dir.path(), false).is_err());
    let mut unconstrained = small();
    unconstrained.constraint = None;
    assert!(harness::sweep(&unconstrained, SweepAxis::Threshold, &[0.1], 1, dir.path(), false).is_err());
}

#[test]
fn bundled_configs_parse_and_build() {
    for text in [
        include_str!("../../../configs/synthetic.toml"),
        include_str!("../../../configs/wireless.toml"),
        include_str!("../../../configs/chain_oracle.toml"),
    ] {
        let cfg = ExperimentConfig::parse(text).unwrap();
        let cmdp = cfg.build_env().unwrap();
        cfg.build_utilities(&cmdp).unwrap();
        initial_policy(&cmdp, &cfg.train_config()).unwrap();
    }
}
