//! General utilities over local occupancies and their gradients (shadow rewards).

use crate::error::{Error, Result};
use crate::occupancy::{state_marginal, LocalOccupancy};
use crate::rollout::Trajectory;

/// Floor applied to state marginals inside the entropy gradient.
pub const ENTROPY_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum UtilityKind {
    /// `<r, lambda_i>` for a table `r[s * |A_i| + a]`.
    Linear(Vec<f64>),
    /// Cumulative environment reward `r_i(s_{N_i}, a_{N_i})`. Not a function of
    /// `lambda_i` alone; evaluated on trajectories or global occupancies.
    EnvReward,
    /// `-sum_s d_i(s) ln d_i(s)`.
    Entropy,
    /// `(1-gamma)^2 / 2 * ||m||^2` with `m(a) = sum_s lambda_i(s, a)`.
    L2ActionMarginal,
}

/// A utility of one agent. With a threshold it is a constraint and reports
/// `value - threshold`, so feasibility is always `g >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralUtility {
    pub kind: UtilityKind,
    pub gamma: f64,
    pub threshold: Option<f64>,
}

/// Gradient of a utility with respect to the local occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowReward {
    pub n_states: usize,
    pub n_actions: usize,
    pub table: Vec<f64>,
}

impl ShadowReward {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, table: vec![0.0; n_states * n_actions] }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.table[s * self.n_actions + a]
    }

    pub fn sup_norm(&self) -> f64 {
        self.table.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Per-step reward fed to the critic.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardSignal {
    /// Table over the agent's own `(s_i, a_i)`.
    Local(ShadowReward),
    /// The environment reward of the agent.
    Env,
}

impl RewardSignal {
    /// Reward at step `k` of a trajectory for agent `i`.
    pub fn at(&self, agent: usize, traj: &Trajectory, k: usize) -> f64 {
        match self {
            RewardSignal::Local(r) => r.get(traj.state(k)[agent], traj.action(k)[agent]),
            RewardSignal::Env => traj.rewards(k)[agent],
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, RewardSignal::Local(r) if r.table.iter().all(|&x| x == 0.0))
    }
}

impl GeneralUtility {
    pub fn linear(reward: Vec<f64>) -> Self {
        Self { kind: UtilityKind::Linear(reward), gamma: 0.0, threshold: None }
    }

    pub fn env_reward(gamma: f64) -> Self {
        Self { kind: UtilityKind::EnvReward, gamma, threshold: None }
    }

    pub fn entropy(gamma: f64) -> Self {
        Self { kind: UtilityKind::Entropy, gamma, threshold: None }
    }

    pub fn l2(gamma: f64) -> Self {
        Self { kind: UtilityKind::L2ActionMarginal, gamma, threshold: None }
    }

    pub fn with_threshold(mut self, c: f64) -> Self {
        self.threshold = Some(c);
        self
    }

    pub fn is_constraint(&self) -> bool {
        self.threshold.is_some()
    }

    /// Whether the value depends on `lambda_i` only.
    pub fn is_local(&self) -> bool {
        !matches!(self.kind, UtilityKind::EnvReward)
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if let UtilityKind::Linear(r) = &self.kind {
            if r.len() != n_states * n_actions {
                return Err(Error::ShapeMismatch(format!(
                    "linear reward has {} entries, expected {}x{}",
                    r.len(),
                    n_states,
                    n_actions
                )));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel("linear reward must be finite".into()));
            }
        }
        if self.threshold.is_some_and(|c| !c.is_finite()) {
            return Err(Error::InvalidModel("threshold must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidModel(format!("utility gamma {} not in [0,1)", self.gamma)));
        }
        Ok(())
    }

    fn offset(&self, raw: f64) -> f64 {
        raw - self.threshold.unwrap_or(0.0)
    }

    /// Value before the threshold is subtracted.
    pub fn raw_value(&self, lambda: &LocalOccupancy) -> Result<f64> {
        if lambda.table.iter().any(|x| x.is_nan()) {
            return Err(Error::NaN("occupancy"));
        }
        match &self.kind {
            UtilityKind::Linear(r) => {
                self.validate(lambda.n_states, lambda.n_actions)?;
                Ok(r.iter().zip(&lambda.table).map(|(x, y)| x * y).sum())
            }
            UtilityKind::EnvReward => Err(Error::InvalidModel(
                "environment-reward utility needs trajectories or a global occupancy".into(),
            )),
            UtilityKind::Entropy => Ok(state_marginal(lambda, self.gamma)
                .d
                .iter()
                .map(|&d| if d > 0.0 { -d * d.ln() } else { 0.0 })
                .sum()),
            UtilityKind::L2ActionMarginal => {
                let w = (1.0 - self.gamma).powi(2);
                Ok(0.5 * w * lambda.action_marginal().iter().map(|m| m * m).sum::<f64>())
            }
        }
    }

    pub fn value(&self, lambda: &LocalOccupancy) -> Result<f64> {
        Ok(self.offset(self.raw_value(lambda)?))
    }

    /// Value from a batch: trajectory average for environment rewards, the
    /// occupancy formula otherwise.
    pub fn empirical_value(&self, agent: usize, batch: &[Trajectory], lambda: &LocalOccupancy) -> Result<f64> {
        match self.kind {
            UtilityKind::EnvReward => {
                if batch.is_empty() {
                    return Err(Error::EmptyBatch);
                }
                let mut total = 0.0;
                for t in batch {
                    let mut disc = 1.0;
                    for k in 0..t.len() {
                        total += disc * t.rewards(k)[agent];
                        disc *= self.gamma;
                    }
                }
                Ok(self.offset(total / batch.len() as f64))
            }
            _ => self.value(lambda),
        }
    }

    /// Analytic gradient with respect to `lambda_i`.
    pub fn shadow_reward(&self, lambda: &LocalOccupancy) -> Result<ShadowReward> {
        let (ns, na) = (lambda.n_states, lambda.n_actions);
        let table = match &self.kind {
            UtilityKind::Linear(r) => {
                self.validate(ns, na)?;
                r.clone()
            }
            UtilityKind::EnvReward => {
                return Err(Error::InvalidModel("environment-reward utility has no local shadow reward".into()))
            }
            UtilityKind::Entropy => {
                let d = state_marginal(lambda, self.gamma).d;
                (0..ns * na)
                    .map(|k| -(1.0 - self.gamma) * (d[k / na].max(ENTROPY_FLOOR).ln() + 1.0))
                    .collect()
            }
            UtilityKind::L2ActionMarginal => {
                let m = lambda.action_marginal();
                let w = (1.0 - self.gamma).powi(2);
                (0..ns * na).map(|k| w * m[k % na]).collect()
            }
        };
        Ok(ShadowReward { n_states: ns, n_actions: na, table })
    }

    pub fn signal(&self, lambda: &LocalOccupancy) -> Result<RewardSignal> {
        match self.kind {
            UtilityKind::EnvReward => Ok(RewardSignal::Env),
            _ => Ok(RewardSignal::Local(self.shadow_reward(lambda)?)),
        }
    }

    /// Central-difference gradient, one coordinate at a time.
    pub fn fd_gradient(&self, lambda: &LocalOccupancy, h: f64) -> Result<ShadowReward> {
        if h.is_nan() || h <= 0.0 {
            return Err(Error::InvalidModel("finite-difference step must be positive".into()));
        }
        let mut table = Vec::with_capacity(lambda.table.len());
        let mut probe = lambda.clone();
        for k in 0..lambda.table.len() {
            probe.table[k] = lambda.table[k] + h;
            let up = self.raw_value(&probe)?;
            probe.table[k] = lambda.table[k] - h;
            let down = self.raw_value(&probe)?;
            probe.table[k] = lambda.table[k];
            table.push((up - down) / (2.0 * h));
        }
        Ok(ShadowReward { n_states: lambda.n_states, n_actions: lambda.n_actions, table })
    }
}
