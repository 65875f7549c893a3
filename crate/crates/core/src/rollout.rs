//! Trajectory sampling under a κ-hop policy.

use rand::Rng;

use crate::model::FactoredCmdp;
use crate::policy::KHopPolicy;
use crate::rng::{stream, Purpose};

/// One finite trajectory. Row `k` of each table holds step `k` for all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    states: Vec<usize>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

impl Trajectory {
    pub fn with_capacity(n: usize, len: usize) -> Self {
        Self {
            n,
            states: Vec::with_capacity(n * len),
            actions: Vec::with_capacity(n * len),
            rewards: Vec::with_capacity(n * len),
        }
    }

    /// Appends a step. `rewards` holds the environment reward of every agent.
    pub fn push(&mut self, s: &[usize], a: &[usize], rewards: &[f64]) {
        assert!(s.len() == self.n && a.len() == self.n && rewards.len() == self.n);
        self.states.extend_from_slice(s);
        self.actions.extend_from_slice(a);
        self.rewards.extend_from_slice(rewards);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.n.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[usize] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn action(&self, k: usize) -> &[usize] {
        &self.actions[k * self.n..(k + 1) * self.n]
    }

    pub fn rewards(&self, k: usize) -> &[f64] {
        &self.rewards[k * self.n..(k + 1) * self.n]
    }

    #[cfg(test)]
    pub(crate) fn state_mut(&mut self, k: usize) -> &mut [usize] {
        &mut self.states[k * self.n..(k + 1) * self.n]
    }

    #[cfg(test)]
    pub(crate) fn action_mut(&mut self, k: usize) -> &mut [usize] {
        &mut self.actions[k * self.n..(k + 1) * self.n]
    }
}

/// Rolls out `len` steps from `s0`.
pub fn rollout<R: Rng + ?Sized>(
    cmdp: &FactoredCmdp,
    policy: &KHopPolicy,
    s0: Vec<usize>,
    len: usize,
    rng: &mut R,
) -> Trajectory {
    let n = cmdp.n();
    let mut traj = Trajectory::with_capacity(n, len);
    let mut s = s0;
    let mut a = vec![0; n];
    let mut next = vec![0; n];
    let mut r = vec![0.0; n];
    for _ in 0..len {
        policy.sample_joint_into(&s, rng, &mut a);
        for (i, ri) in r.iter_mut().enumerate() {
            *ri = cmdp.reward(i, &s, &a);
        }
        traj.push(&s, &a, &r);
        cmdp.step_into(&s, &a, rng, &mut next);
        std::mem::swap(&mut s, &mut next);
    }
    traj
}

/// `B` trajectories of length `H` from the model's initial distribution.
/// Trajectory `b` of iteration `t` uses its own stream, so the batch does not
/// depend on evaluation order.
pub fn sample_batch(
    cmdp: &FactoredCmdp,
    policy: &KHopPolicy,
    b: usize,
    h: usize,
    seed: u64,
    t: u64,
) -> Vec<Trajectory> {
    (0..b)
        .map(|k| {
            let mut rng = stream(seed, Purpose::Batch, t, k as u64);
            let s0 = cmdp.sample_initial(&mut rng);
            rollout(cmdp, policy, s0, h, &mut rng)
        })
        .collect()
}
