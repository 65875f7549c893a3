//! The primal-dual actor-critic loop.

use std::time::Instant;

use crate::critic::{td_evaluate_multi, TDConfig, TruncatedQTable};
use crate::error::{Error, Result};
use crate::model::FactoredCmdp;
use crate::occupancy::{estimate_local_occupancy, ExactSystem};
use crate::policy::KHopPolicy;
use crate::primal_dual::{
    dual_update, exact_lagrangian_gradient_in, exact_values, flatten, fosp_metrics, truncated_pg_estimate,
    AgentUtilities, DualVariable, Fosp,
};
use crate::rng::{stream, Purpose};
use crate::rollout::sample_batch;
use crate::utility::{RewardSignal, ShadowReward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualSchedule {
    Constant,
    /// `eta_mu * (t + 1)^{1/3}`.
    CubeRoot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub eta_theta: f64,
    pub eta_mu: f64,
    pub schedule: DualSchedule,
}

impl StepSizes {
    pub fn eta_mu_at(&self, t: usize) -> f64 {
        match self.schedule {
            DualSchedule::Constant => self.eta_mu,
            DualSchedule::CubeRoot => self.eta_mu * ((t + 1) as f64).cbrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kappa: usize,
    pub horizon: usize,
    pub batch: usize,
    pub iterations: usize,
    pub steps: StepSizes,
    pub mu_bar: f64,
    pub theta_bar: f64,
    pub td: TDConfig,
    pub seed: u64,
    /// Iterations between exact-oracle metrics; 0 disables them.
    pub oracle_every: usize,
    /// Initial logit of every action; entry `k` applies to action `k`, missing entries are 0.
    pub init_logits: Vec<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        let s = &self.steps;
        if !(s.eta_theta >= 0.0 && s.eta_theta.is_finite()) {
            return Err(Error::config("eta_theta", "must be nonnegative and finite"));
        }
        if !(s.eta_mu >= 0.0 && s.eta_mu.is_finite()) {
            return Err(Error::config("eta_mu", "must be nonnegative and finite"));
        }
        if !(self.mu_bar > 0.0 && self.mu_bar.is_finite()) {
            return Err(Error::config("mu_bar", "must be positive and finite"));
        }
        if !(self.theta_bar > 0.0 && self.theta_bar.is_finite()) {
            return Err(Error::config("theta_bar", "must be positive and finite"));
        }
        if self.init_logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("init_logits", "must be finite"));
        }
        self.td.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSource {
    /// Exact gradients and constraint values.
    Oracle,
    /// Monte-Carlo gradient and empirical constraint values.
    PlugIn,
}

impl MetricSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricSource::Oracle => "oracle",
            MetricSource::PlugIn => "plugin",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub t: usize,
    /// Empirical objective `(1/n) sum_i f_i`.
    pub ret: f64,
    pub g: Vec<f64>,
    /// `sum_i max(0, -g_i)`.
    pub violation: f64,
    /// `mu^{t+1}`.
    pub mu: Vec<f64>,
    pub metrics: Fosp,
    pub source: MetricSource,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub policy: KHopPolicy,
    pub mu: DualVariable,
    pub iter: usize,
    pub history: Vec<IterRecord>,
    /// Objective and constraint critics of the last iteration.
    pub q_f: Vec<TruncatedQTable>,
    pub q_g: Vec<Option<TruncatedQTable>>,
}

pub fn initial_policy(cmdp: &FactoredCmdp, cfg: &TrainConfig) -> Result<KHopPolicy> {
    let p = KHopPolicy::for_model(cmdp, cfg.kappa, cfg.theta_bar)?;
    if cfg.init_logits.iter().all(|&x| x == 0.0) {
        return Ok(p);
    }
    let theta = (0..p.n())
        .map(|i| {
            let na = p.n_actions(i);
            (0..p.theta(i).len()).map(|k| cfg.init_logits.get(k % na).copied().unwrap_or(0.0)).collect()
        })
        .collect();
    p.with_theta(theta)
}

fn check_finite(iter: usize, what: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericAbort { iter, what: what.to_string() });
    }
    Ok(())
}

pub fn train(cmdp: &FactoredCmdp, utilities: &[AgentUtilities], cfg: &TrainConfig) -> Result<TrainState> {
    train_with(cmdp, utilities, cfg, |_, _| Ok(()))
}

/// Runs the loop, calling `on_iter` after every iteration.
pub fn train_with<F>(cmdp: &FactoredCmdp, utilities: &[AgentUtilities], cfg: &TrainConfig, mut on_iter: F) -> Result<TrainState>
where
    F: FnMut(&TrainState, &IterRecord) -> Result<()>,
{
    cfg.validate()?;
    let n = cmdp.n();
    if utilities.len() != n {
        return Err(Error::ShapeMismatch(format!("{} utility specs for {n} agents", utilities.len())));
    }
    for (i, u) in utilities.iter().enumerate() {
        let (ns, na) = (cmdp.state_sizes()[i], cmdp.action_sizes()[i]);
        u.objective.validate(ns, na)?;
        if let Some(c) = &u.constraint {
            c.validate(ns, na)?;
        }
    }
    let gamma = cmdp.gamma();
    let oracle_ok = cfg.oracle_every > 0 && cmdp.check_cap().is_ok();
    let mut state = TrainState {
        policy: initial_policy(cmdp, cfg)?,
        mu: DualVariable::zeros(n, cfg.mu_bar),
        iter: 0,
        history: Vec::with_capacity(cfg.iterations),
        q_f: Vec::new(),
        q_g: Vec::new(),
    };
    let start = Instant::now();
    for t in 0..cfg.iterations {
        let policy = &state.policy;
        let batch = sample_batch(cmdp, policy, cfg.batch, cfg.horizon, cfg.seed, t as u64);

        let mut f = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut rf = Vec::with_capacity(n);
        let mut rg = Vec::with_capacity(n);
        for (i, u) in utilities.iter().enumerate() {
            let (ns, na) = (cmdp.state_sizes()[i], cmdp.action_sizes()[i]);
            let lam = estimate_local_occupancy(&batch, i, ns, na, gamma, cfg.horizon)?;
            f[i] = u.objective.empirical_value(i, &batch, &lam)?;
            rf.push(u.objective.signal(&lam)?);
            match &u.constraint {
                Some(c) => {
                    g[i] = c.empirical_value(i, &batch, &lam)?;
                    rg.push(c.signal(&lam)?);
                }
                None => rg.push(RewardSignal::Local(ShadowReward::zeros(ns, na))),
            }
        }
        check_finite(t, "objective value", &f)?;
        check_finite(t, "constraint value", &g)?;

        let mut td_rng = stream(cfg.seed, Purpose::Td, t as u64, 0);
        let mut q = td_evaluate_multi(cmdp, policy, &[rf, rg], cfg.kappa, &cfg.td, &mut td_rng)?;
        let q_g: Vec<Option<TruncatedQTable>> =
            q.pop().unwrap_or_default().into_iter().zip(utilities).map(|(t, u)| u.constraint.as_ref().map(|_| t)).collect();
        let q_f = q.pop().unwrap_or_default();
        for table in q_f.iter().chain(q_g.iter().flatten()) {
            if !table.sup_norm().is_finite() {
                return Err(Error::NumericAbort { iter: t, what: "critic".into() });
            }
        }

        let mu = dual_update(&g, cfg.steps.eta_mu_at(t), cfg.mu_bar, n)?;
        let grads = truncated_pg_estimate(&batch, policy, cmdp.graph(), &q_f, &q_g, &mu, cfg.kappa, gamma, cfg.horizon)?;
        let flat = flatten(&grads);
        check_finite(t, "policy gradient", &flat)?;

        let theta = flatten(policy.thetas());
        let (metrics, source) = if oracle_ok && t % cfg.oracle_every == 0 {
            let sys = ExactSystem::new(cmdp, policy)?;
            let (_, g_exact) = exact_values(&sys, utilities)?;
            let grad = flatten(&exact_lagrangian_gradient_in(&sys, policy, utilities, &mu.mu)?);
            let grad_mu: Vec<f64> = g_exact.iter().map(|x| x / n as f64).collect();
            (fosp_metrics(&grad, &grad_mu, &theta, &mu.mu, cfg.theta_bar, cfg.mu_bar), MetricSource::Oracle)
        } else {
            let grad_mu: Vec<f64> = g.iter().map(|x| x / n as f64).collect();
            (fosp_metrics(&flat, &grad_mu, &theta, &mu.mu, cfg.theta_bar, cfg.mu_bar), MetricSource::PlugIn)
        };
        if !metrics.e.is_finite() {
            return Err(Error::NumericAbort { iter: t, what: "stationarity metric".into() });
        }

        let next = policy.ascent(&grads, cfg.steps.eta_theta)?;
        let record = IterRecord {
            t,
            ret: f.iter().sum::<f64>() / n as f64,
            violation: g.iter().map(|x| (-x).max(0.0)).sum(),
            g,
            mu: mu.mu.clone(),
            metrics,
            source,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        state.policy = next;
        state.mu = mu;
        state.iter = t + 1;
        state.q_f = q_f;
        state.q_g = q_g;
        state.history.push(record.clone());
        on_iter(&state, &record)?;
    }
    Ok(state)
}

/// Mean of `f` over the last `frac` of the history (at least one record).
pub fn tail_mean(history: &[IterRecord], frac: f64, f: impl Fn(&IterRecord) -> f64) -> f64 {
    if history.is_empty() {
        return f64::NAN;
    }
    let k = ((history.len() as f64 * frac).round() as usize).clamp(1, history.len());
    history[history.len() - k..].iter().map(f).sum::<f64>() / k as f64
}

/// Mean of `f` over the first `frac` of the history.
pub fn head_mean(history: &[IterRecord], frac: f64, f: impl Fn(&IterRecord) -> f64) -> f64 {
    if history.is_empty() {
        return f64::NAN;
    }
    let k = ((history.len() as f64 * frac).round() as usize).clamp(1, history.len());
    history[..k].iter().map(f).sum::<f64>() / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{synthetic_line, SyntheticLineSpec};
    use crate::utility::GeneralUtility;

    fn setup(n: usize) -> (FactoredCmdp, Vec<AgentUtilities>, TrainConfig) {
        let gamma = 0.9;
        let m = synthetic_line(&SyntheticLineSpec { n, gamma, ..Default::default() }).unwrap();
        let u = (0..n)
            .map(|_| AgentUtilities {
                objective: GeneralUtility::env_reward(gamma),
                constraint: Some(GeneralUtility::entropy(gamma).with_threshold(0.3)),
            })
            .collect();
        let cfg = TrainConfig {
            kappa: 1,
            horizon: 20,
            batch: 3,
            iterations: 5,
            steps: StepSizes { eta_theta: 0.5, eta_mu: 10.0, schedule: DualSchedule::Constant },
            mu_bar: 100.0,
            theta_bar: 50.0,
            td: TDConfig::default_for(gamma, 100),
            seed: 3,
            oracle_every: 2,
            init_logits: vec![],
        };
        (m, u, cfg)
    }

    #[test]
    fn zero_iterations_keep_initial_policy() {
        let (m, u, mut cfg) = setup(3);
        cfg.iterations = 0;
        let s = train(&m, &u, &cfg).unwrap();
        assert!(s.history.is_empty());
        assert_eq!(s.policy, initial_policy(&m, &cfg).unwrap());
    }

    #[test]
    fn history_is_deterministic() {
        let (m, u, cfg) = setup(3);
        let strip = |h: Vec<IterRecord>| h.into_iter().map(|r| IterRecord { elapsed_ms: 0.0, ..r }).collect::<Vec<_>>();
        let a = train(&m, &u, &cfg).unwrap();
        let b = train(&m, &u, &cfg).unwrap();
        assert_eq!(strip(a.history), strip(b.history));
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn oracle_metrics_on_schedule() {
        let (m, u, cfg) = setup(2);
        let s = train(&m, &u, &cfg).unwrap();
        let src: Vec<_> = s.history.iter().map(|r| r.source).collect();
        assert_eq!(src[0], MetricSource::Oracle);
        assert_eq!(src[1], MetricSource::PlugIn);
        assert_eq!(src[2], MetricSource::Oracle);
        assert!(s.history.iter().all(|r| r.violation >= 0.0 && r.mu.iter().all(|&x| (0.0..=100.0).contains(&x))));
    }

    #[test]
    fn cube_root_schedule() {
        let s = StepSizes { eta_theta: 1.0, eta_mu: 2.0, schedule: DualSchedule::CubeRoot };
        assert!((s.eta_mu_at(7) - 4.0).abs() < 1e-12);
        assert_eq!(StepSizes { schedule: DualSchedule::Constant, ..s }.eta_mu_at(7), 2.0);
    }

    #[test]
    fn invalid_config_named() {
        let (m, u, mut cfg) = setup(2);
        cfg.batch = 0;
        match train(&m, &u, &cfg) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "batch"),
            other => panic!("{other:?}"),
        }
    }
}
