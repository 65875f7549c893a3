//! Primal-dual actor-critic for networked constrained MDPs with general
//! utilities, κ-hop policies and truncated shadow Q-functions, plus exact
//! oracles for small instances.

pub mod config;
pub mod critic;
pub mod envs;
pub mod error;
pub mod graph;
pub mod harness;
pub mod model;
pub mod occupancy;
pub mod policy;
pub mod primal_dual;
pub mod rng;
pub mod rollout;
pub mod space;
pub mod train;
pub mod utility;
pub mod verify;

pub use critic::{td_evaluate, td_evaluate_multi, TDConfig, TruncatedQTable};
pub use envs::{synthetic_line, wireless_grid, SyntheticLineSpec, WirelessGridSpec};
pub use error::{Error, Result};
pub use graph::DependenceGraph;
pub use model::{compute_decay_matrix, global_transition_matrix, DecayProfile, FactoredCmdp};
pub use occupancy::{
    estimate_local_occupancy, exact_global_occupancy, marginalize, state_marginal, ExactSystem, GlobalOccupancy,
    LocalOccupancy, MassConvention, StateMarginal,
};
pub use policy::KHopPolicy;
pub use primal_dual::{dual_update, fosp_metrics, DualVariable, Fosp};
pub use rollout::Trajectory;
pub use train::{train, StepSizes, TrainConfig, TrainState};
pub use utility::{GeneralUtility, RewardSignal, ShadowReward, UtilityKind};
