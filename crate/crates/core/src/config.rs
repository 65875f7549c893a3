//! Experiment configuration (TOML).
//!
//! ```toml
//! schema_version = 1
//! seed = 0
//! kappa = 1
//! gamma = 0.99
//! iterations = 400
//! horizon = 125
//! batch = 5
//! eta_theta = 0.01
//! eta_mu = 10.0
//!
//! [env]
//! name = "synthetic_line"
//! n = 10
//!
//! [objective]
//! kind = "env_reward"
//!
//! [constraint]
//! kind = "entropy"
//! threshold = 0.3
//!
//! [td]
//! steps = 500
//! ```
//!
//! Unknown keys are rejected. See the README for every field and its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::critic::TDConfig;
use crate::envs::{synthetic_line, wireless_grid, SyntheticLineSpec, WirelessGridSpec};
use crate::error::{Error, Result};
use crate::model::FactoredCmdp;
use crate::policy::DEFAULT_THETA_BAR;
use crate::primal_dual::{AgentUtilities, DEFAULT_MU_BAR};
use crate::train::{DualSchedule, StepSizes, TrainConfig};
use crate::utility::GeneralUtility;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub kappa: usize,
    pub gamma: f64,
    pub iterations: usize,
    pub horizon: usize,
    pub batch: usize,
    pub eta_theta: f64,
    pub eta_mu: f64,
    #[serde(default = "default_schedule")]
    pub dual_schedule: DualSchedule,
    #[serde(default = "default_mu_bar")]
    pub mu_bar: f64,
    #[serde(default = "default_theta_bar")]
    pub theta_bar: f64,
    #[serde(default)]
    pub oracle_every: usize,
    /// Initial logit per action index, shared by all agents and neighborhood states.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub init_logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub env: EnvConfig,
    pub objective: UtilityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<UtilityConfig>,
    #[serde(default)]
    pub td: TdSection,
}

fn default_schedule() -> DualSchedule {
    DualSchedule::Constant
}

fn default_mu_bar() -> f64 {
    DEFAULT_MU_BAR
}

fn default_theta_bar() -> f64 {
    DEFAULT_THETA_BAR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    SyntheticLine {
        n: usize,
        #[serde(default = "one")]
        reward_head: f64,
        #[serde(default = "tenth")]
        reward_rest: f64,
    },
    WirelessGrid {
        side: usize,
        #[serde(default = "three")]
        deadline: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arrival: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        success: Option<Vec<f64>>,
        #[serde(default)]
        seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

fn tenth() -> f64 {
    0.1
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKindConfig {
    EnvReward,
    Linear,
    Entropy,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityConfig {
    pub kind: UtilityKindConfig,
    /// Required for constraints, rejected for objectives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Linear reward table `r[s * |A_i| + a]`, shared by all agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Vec<f64>>,
    /// File with the linear reward table as comma or whitespace separated numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdSection {
    #[serde(default = "default_td_steps")]
    pub steps: usize,
    /// Step-size numerator; defaults to `round(20 / (1 - sqrt(gamma)))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Step-size offset; defaults to `2h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default)]
    pub k0: usize,
}

fn default_td_steps() -> usize {
    500
}

impl Default for TdSection {
    fn default() -> Self {
        Self { steps: default_td_steps(), h: None, k1: None, k0: 0 }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| text[s].trim().to_string()).unwrap_or_else(|| "<root>".into());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative reward paths resolve against the config file
        let base = path.parent().unwrap_or(Path::new("."));
        for u in std::iter::once(&mut cfg.objective).chain(cfg.constraint.as_mut()) {
            if let Some(p) = &mut u.reward_path {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config("schema_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0,1)"));
        }
        for (field, v) in [("horizon", self.horizon), ("batch", self.batch), ("td.steps", self.td.steps)] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        for (field, v) in [("eta_theta", self.eta_theta), ("eta_mu", self.eta_mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be nonnegative and finite"));
            }
        }
        for (field, v) in [("mu_bar", self.mu_bar), ("theta_bar", self.theta_bar)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive and finite"));
            }
        }
        if self.objective.threshold.is_some() {
            return Err(Error::config("objective.threshold", "objectives take no threshold"));
        }
        if let Some(c) = &self.constraint {
            match c.threshold {
                Some(t) if t.is_finite() => {}
                _ => return Err(Error::config("constraint.threshold", "constraints need a finite threshold")),
            }
        }
        for (name, u) in std::iter::once(("objective", &self.objective)).chain(self.constraint.iter().map(|c| ("constraint", c))) {
            let linear = u.kind == UtilityKindConfig::Linear;
            let has_table = u.reward.is_some() || u.reward_path.is_some();
            if linear != has_table {
                return Err(Error::config(
                    format!("{name}.reward"),
                    if linear { "linear utilities need `reward` or `reward_path`" } else { "only linear utilities take a reward table" },
                ));
            }
            if u.reward.is_some() && u.reward_path.is_some() {
                return Err(Error::config(format!("{name}.reward"), "give either `reward` or `reward_path`"));
            }
        }
        if let Some(h) = self.td.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("td.h", "must be positive"));
            }
        }
        if let Some(k1) = self.td.k1 {
            if !(k1 >= 1.0 && k1.is_finite()) {
                return Err(Error::config("td.k1", "must be at least 1"));
            }
        }
        if self.init_logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("init_logits", "must be finite"));
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<FactoredCmdp> {
        match &self.env {
            EnvConfig::SyntheticLine { n, reward_head, reward_rest } => synthetic_line(&SyntheticLineSpec {
                n: *n,
                gamma: self.gamma,
                reward_head: *reward_head,
                reward_rest: *reward_rest,
            }),
            EnvConfig::WirelessGrid { side, deadline, arrival, success, seed } => wireless_grid(&WirelessGridSpec {
                side: *side,
                gamma: self.gamma,
                deadline: *deadline,
                arrival: arrival.clone(),
                success: success.clone(),
                seed: *seed,
            }),
        }
    }

    fn build_utility(&self, name: &str, u: &UtilityConfig) -> Result<GeneralUtility> {
        let base = match u.kind {
            UtilityKindConfig::EnvReward => GeneralUtility::env_reward(self.gamma),
            UtilityKindConfig::Entropy => GeneralUtility::entropy(self.gamma),
            UtilityKindConfig::L2 => GeneralUtility::l2(self.gamma),
            UtilityKindConfig::Linear => {
                let table = match (&u.reward, &u.reward_path) {
                    (Some(r), _) => r.clone(),
                    (None, Some(p)) => read_table(p).map_err(|reason| Error::config(format!("{name}.reward_path"), reason))?,
                    (None, None) => return Err(Error::config(format!("{name}.reward"), "missing")),
                };
                let mut g = GeneralUtility::linear(table);
                g.gamma = self.gamma;
                g
            }
        };
        Ok(match u.threshold {
            Some(c) => base.with_threshold(c),
            None => base,
        })
    }

    pub fn build_utilities(&self, cmdp: &FactoredCmdp) -> Result<Vec<AgentUtilities>> {
        let objective = self.build_utility("objective", &self.objective)?;
        let constraint = self.constraint.as_ref().map(|c| self.build_utility("constraint", c)).transpose()?;
        (0..cmdp.n())
            .map(|i| {
                let (ns, na) = (cmdp.state_sizes()[i], cmdp.action_sizes()[i]);
                objective.validate(ns, na).map_err(|e| Error::config("objective.reward", e.to_string()))?;
                if let Some(c) = &constraint {
                    c.validate(ns, na).map_err(|e| Error::config("constraint.reward", e.to_string()))?;
                }
                Ok(AgentUtilities { objective: objective.clone(), constraint: constraint.clone() })
            })
            .collect()
    }

    pub fn td_config(&self) -> TDConfig {
        let mut td = TDConfig::default_for(self.gamma, self.td.steps);
        if let Some(h) = self.td.h {
            td.h = h;
            td.k1 = 2.0 * h;
        }
        if let Some(k1) = self.td.k1 {
            td.k1 = k1;
        }
        td.k0 = self.td.k0;
        td
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kappa: self.kappa,
            horizon: self.horizon,
            batch: self.batch,
            iterations: self.iterations,
            steps: StepSizes { eta_theta: self.eta_theta, eta_mu: self.eta_mu, schedule: self.dual_schedule },
            mu_bar: self.mu_bar,
            theta_bar: self.theta_bar,
            td: self.td_config(),
            seed: self.seed,
            oracle_every: self.oracle_every,
            init_logits: self.init_logits.clone(),
        }
    }
}

fn read_table(path: &Path) -> std::result::Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
schema_version = 1
seed = 4
kappa = 1
gamma = 0.99
iterations = 10
horizon = 125
batch = 5
eta_theta = 0.01
eta_mu = 10.0

[env]
name = "synthetic_line"
n = 10

[objective]
kind = "env_reward"

[constraint]
kind = "entropy"
threshold = 0.3

[td]
steps = 500
"#;

    #[test]
    fn parses_sample_with_defaults() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.mu_bar, 100.0);
        assert_eq!(c.theta_bar, 50.0);
        assert_eq!(c.dual_schedule, DualSchedule::Constant);
        assert_eq!(c.env, EnvConfig::SyntheticLine { n: 10, reward_head: 1.0, reward_rest: 0.1 });
        let td = c.td_config();
        assert_eq!((td.k, td.h, td.k1), (500, 3990.0, 7980.0));
        let m = c.build_env().unwrap();
        assert_eq!(c.build_utilities(&m).unwrap().len(), 10);
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
        let w = SAMPLE.replace("name = \"synthetic_line\"\nn = 10", "name = \"wireless_grid\"\nside = 3\nseed = 2");
        let c = ExperimentConfig::parse(&w).unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::parse(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert!(field_of(&SAMPLE.replace("batch = 5", "batch = 5\nbatchh = 3")).contains("batchh"));
        assert_eq!(field_of(&SAMPLE.replace("gamma = 0.99", "gamma = 1.5")), "gamma");
        assert_eq!(field_of(&SAMPLE.replace("batch = 5", "batch = 0")), "batch");
        assert_eq!(field_of(&SAMPLE.replace("schema_version = 1", "schema_version = 9")), "schema_version");
        assert_eq!(field_of(&SAMPLE.replace("threshold = 0.3", "")), "constraint.threshold");
        assert_eq!(field_of(&SAMPLE.replace("kind = \"env_reward\"", "kind = \"linear\"")), "objective.reward");
    }

    #[test]
    fn linear_reward_from_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("r.txt"), "0, 0\n1 1\n").unwrap();
        let text = SAMPLE.replace("kind = \"env_reward\"", "kind = \"linear\"\nreward_path = \"r.txt\"");
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        let m = c.build_env().unwrap();
        let u = c.build_utilities(&m).unwrap();
        assert_eq!(u[0].objective.kind, crate::utility::UtilityKind::Linear(vec![0.0, 0.0, 1.0, 1.0]));
    }
}
