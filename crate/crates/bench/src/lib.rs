//! Fixtures shared by the benchmarks in `benches/`.

use safemarl::config::ExperimentConfig;
use safemarl::primal_dual::AgentUtilities;
use safemarl::train::TrainConfig;
use safemarl::{synthetic_line, FactoredCmdp, GeneralUtility, KHopPolicy, SyntheticLineSpec};

pub fn chain(n: usize, gamma: f64) -> FactoredCmdp {
    synthetic_line(&SyntheticLineSpec { n, gamma, ..Default::default() }).expect("valid chain")
}

pub fn entropy_utilities(n: usize, gamma: f64, c: f64) -> Vec<AgentUtilities> {
    (0..n)
        .map(|_| AgentUtilities {
            objective: GeneralUtility::env_reward(gamma),
            constraint: Some(GeneralUtility::entropy(gamma).with_threshold(c)),
        })
        .collect()
}

pub fn uniform_policy(m: &FactoredCmdp, kappa: usize) -> KHopPolicy {
    KHopPolicy::for_model(m, kappa, 50.0).expect("policy fits")
}

/// The bundled synthetic experiment with `iterations` overridden.
pub fn synthetic_experiment(iterations: usize) -> (FactoredCmdp, Vec<AgentUtilities>, TrainConfig) {
    let mut cfg = ExperimentConfig::parse(include_str!("../../../configs/synthetic.toml")).expect("bundled config");
    cfg.iterations = iterations;
    let m = cfg.build_env().expect("env");
    let u = cfg.build_utilities(&m).expect("utilities");
    (m, u, cfg.train_config())
}
