//! Truncated shadow Q-functions: TD evaluation and exact oracles.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::FactoredCmdp;
use crate::occupancy::ExactSystem;
use crate::policy::KHopPolicy;
use crate::rollout::{rollout, Trajectory};
use crate::utility::RewardSignal;

/// Tables at most this large are stored densely.
const DENSE_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    /// Unvisited cells read as zero.
    Sparse(HashMap<u128, f64>),
}

/// `Q(s_{N_i^kappa}, a_{N_i^kappa})`. A cell is encoded mixed-radix over
/// `(s_j0, a_j0, s_j1, a_j1, ...)` for the neighborhood in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedQTable {
    pub agent: usize,
    pub kappa: usize,
    neighborhood: Vec<usize>,
    /// `(|S_j|, |A_j|)` per neighborhood agent.
    sizes: Vec<(usize, usize)>,
    storage: Storage,
}

impl TruncatedQTable {
    pub fn zeros(cmdp: &FactoredCmdp, agent: usize, kappa: usize) -> Result<Self> {
        let neighborhood = cmdp.graph().khop_neighborhood(agent, kappa)?;
        let sizes: Vec<(usize, usize)> =
            neighborhood.iter().map(|&j| (cmdp.state_sizes()[j], cmdp.action_sizes()[j])).collect();
        let cells = sizes.iter().try_fold(1u128, |acc, &(ns, na)| acc.checked_mul((ns * na) as u128));
        let storage = match cells {
            Some(c) if c <= DENSE_LIMIT as u128 => Storage::Dense(vec![0.0; c as usize]),
            Some(_) => Storage::Sparse(HashMap::new()),
            None => return Err(Error::TableTooLarge { agent, entries: usize::MAX, limit: usize::MAX }),
        };
        Ok(Self { agent, kappa, neighborhood, sizes, storage })
    }

    pub fn neighborhood(&self) -> &[usize] {
        &self.neighborhood
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Number of cells, saturating.
    pub fn n_cells(&self) -> usize {
        self.sizes.iter().fold(1usize, |acc, &(ns, na)| acc.saturating_mul(ns * na))
    }

    /// Cell of the neighborhood restriction of a global pair.
    pub fn cell(&self, s: &[usize], a: &[usize]) -> u128 {
        self.neighborhood
            .iter()
            .zip(&self.sizes)
            .fold(0u128, |acc, (&j, &(ns, na))| (acc * ns as u128 + s[j] as u128) * na as u128 + a[j] as u128)
    }

    pub fn get_cell(&self, cell: u128) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v[cell as usize],
            Storage::Sparse(m) => m.get(&cell).copied().unwrap_or(0.0),
        }
    }

    fn cell_mut(&mut self, cell: u128) -> &mut f64 {
        match &mut self.storage {
            Storage::Dense(v) => &mut v[cell as usize],
            Storage::Sparse(m) => m.entry(cell).or_insert(0.0),
        }
    }

    pub fn set_cell(&mut self, cell: u128, v: f64) {
        *self.cell_mut(cell) = v;
    }

    pub fn get(&self, s: &[usize], a: &[usize]) -> f64 {
        self.get_cell(self.cell(s, a))
    }

    /// `(cell, value)` for every stored cell in ascending cell order.
    pub fn entries(&self) -> Vec<(u128, f64)> {
        match &self.storage {
            Storage::Dense(v) => v.iter().enumerate().map(|(k, &x)| (k as u128, x)).collect(),
            Storage::Sparse(m) => {
                let mut e: Vec<_> = m.iter().map(|(&k, &v)| (k, v)).collect();
                e.sort_unstable_by_key(|p| p.0);
                e
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.entries().iter().fold(0.0, |m, (_, v)| m.max(v.abs()))
    }

    /// `max |self - other|` over the cells of a dense pair of tables.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        let mut keys: Vec<u128> = self.entries().into_iter().map(|e| e.0).collect();
        keys.extend(other.entries().into_iter().map(|e| e.0));
        keys.into_iter().fold(0.0, |m, k| m.max((self.get_cell(k) - other.get_cell(k)).abs()))
    }

    /// Neighborhood state and action tuples of a cell.
    pub fn decode_cell(&self, mut cell: u128) -> (Vec<usize>, Vec<usize>) {
        let m = self.sizes.len();
        let (mut s, mut a) = (vec![0; m], vec![0; m]);
        for k in (0..m).rev() {
            let (ns, na) = self.sizes[k];
            a[k] = (cell % na as u128) as usize;
            cell /= na as u128;
            s[k] = (cell % ns as u128) as usize;
            cell /= ns as u128;
        }
        (s, a)
    }
}

/// Step-size schedule and length of the TD subroutine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TDConfig {
    /// Number of updates.
    pub k: usize,
    /// Step-size numerator.
    pub h: f64,
    /// Step-size offset: `eta_k = h / (k + k1)`.
    pub k1: f64,
    /// Mixing horizon; recorded only.
    pub k0: usize,
}

impl TDConfig {
    /// `h = round(20 / (1 - sqrt(gamma)))`, `k1 = 2h`.
    pub fn default_for(gamma: f64, k: usize) -> Self {
        let h = (20.0 / (1.0 - gamma.sqrt())).round();
        Self { k, h, k1: 2.0 * h, k0: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("td.k", "must be at least 1"));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config("td.h", "must be positive"));
        }
        if !(self.k1 >= 1.0 && self.k1.is_finite()) {
            return Err(Error::config("td.k1", "must be at least 1"));
        }
        Ok(())
    }

    pub fn step_size(&self, k: usize) -> f64 {
        self.h / (k as f64 + self.k1)
    }
}

/// One asynchronous update of `cell_prev` toward `r + gamma Q(cell_next)`.
/// Returns the change applied.
pub fn td_step(q: &mut TruncatedQTable, cell_prev: u128, cell_next: u128, r: f64, gamma: f64, eta: f64) -> f64 {
    let target = r + gamma * q.get_cell(cell_next);
    let cur = q.get_cell(cell_prev);
    let delta = eta * (target - cur);
    q.set_cell(cell_prev, cur + delta);
    delta
}

/// TD evaluation of several reward channels on one shared trajectory.
/// `channels[c][i]` is the reward of agent `i` in channel `c`; the result has
/// the same shape.
pub fn td_evaluate_multi<R: Rng + ?Sized>(
    cmdp: &FactoredCmdp,
    policy: &KHopPolicy,
    channels: &[Vec<RewardSignal>],
    kappa: usize,
    cfg: &TDConfig,
    rng: &mut R,
) -> Result<Vec<Vec<TruncatedQTable>>> {
    cfg.validate()?;
    let n = cmdp.n();
    if channels.iter().any(|c| c.len() != n) {
        return Err(Error::ShapeMismatch(format!("each reward channel needs {n} agents")));
    }
    for sig in channels.iter().flatten() {
        if let RewardSignal::Local(r) = sig {
            if r.table.iter().any(|x| !x.is_finite()) {
                return Err(Error::NaN("shadow reward"));
            }
        }
    }
    let s0 = cmdp.sample_uniform_state(rng);
    let traj = rollout(cmdp, policy, s0, cfg.k + 1, rng);
    let mut out = Vec::with_capacity(channels.len());
    for ch in channels {
        let mut tables = Vec::with_capacity(n);
        for (i, sig) in ch.iter().enumerate() {
            tables.push(td_on_trajectory(cmdp, i, sig, kappa, cfg, &traj)?);
        }
        out.push(tables);
    }
    Ok(out)
}

pub fn td_evaluate<R: Rng + ?Sized>(
    cmdp: &FactoredCmdp,
    policy: &KHopPolicy,
    rewards: &[RewardSignal],
    kappa: usize,
    cfg: &TDConfig,
    rng: &mut R,
) -> Result<Vec<TruncatedQTable>> {
    Ok(td_evaluate_multi(cmdp, policy, &[rewards.to_vec()], kappa, cfg, rng)?.remove(0))
}

fn td_on_trajectory(
    cmdp: &FactoredCmdp,
    agent: usize,
    reward: &RewardSignal,
    kappa: usize,
    cfg: &TDConfig,
    traj: &Trajectory,
) -> Result<TruncatedQTable> {
    let mut q = TruncatedQTable::zeros(cmdp, agent, kappa)?;
    if reward.is_zero() {
        return Ok(q);
    }
    let gamma = cmdp.gamma();
    let mut prev = q.cell(traj.state(0), traj.action(0));
    for k in 1..=cfg.k {
        let next = q.cell(traj.state(k), traj.action(k));
        let r = reward.at(agent, traj, k - 1);
        td_step(&mut q, prev, next, r, gamma, cfg.step_size(k - 1));
        prev = next;
    }
    Ok(q)
}

/// Global reward table of a signal for agent `i`.
pub fn global_reward(sys: &ExactSystem<'_>, agent: usize, signal: &RewardSignal) -> Vec<f64> {
    match signal {
        RewardSignal::Local(r) => sys.lift_local(agent, &r.table),
        RewardSignal::Env => sys.env_reward(agent),
    }
}

/// Exact `Q^pi(r; s, a)` over global pairs.
pub fn full_q(cmdp: &FactoredCmdp, policy: &KHopPolicy, r: &[f64]) -> Result<Vec<f64>> {
    ExactSystem::new(cmdp, policy)?.q_values(r)
}

/// Anchor-completed restriction of a full Q table to `N_i^kappa`.
pub fn truncate_q(
    cmdp: &FactoredCmdp,
    q_full: &[f64],
    agent: usize,
    kappa: usize,
    anchor: (&[usize], &[usize]),
) -> Result<TruncatedQTable> {
    let mut out = TruncatedQTable::zeros(cmdp, agent, kappa)?;
    if !out.is_dense() {
        return Err(Error::EnumerationCap { size: out.n_cells(), cap: DENSE_LIMIT });
    }
    cmdp.check_state(anchor.0)?;
    cmdp.check_action(anchor.1)?;
    let sspace = cmdp.state_space();
    let aspace = cmdp.action_space();
    if q_full.len() != sspace.size() * aspace.size() {
        return Err(Error::ShapeMismatch("full Q does not match model".into()));
    }
    let (mut s, mut a) = (anchor.0.to_vec(), anchor.1.to_vec());
    let nb = out.neighborhood.clone();
    for cell in 0..out.n_cells() {
        let (sn, an) = out.decode_cell(cell as u128);
        for (k, &j) in nb.iter().enumerate() {
            s[j] = sn[k];
            a[j] = an[k];
        }
        let idx = sspace.encode(&s) * aspace.size() + aspace.encode(&a);
        out.set_cell(cell as u128, q_full[idx]);
    }
    Ok(out)
}

pub fn exact_truncated_q(
    cmdp: &FactoredCmdp,
    policy: &KHopPolicy,
    r: &[f64],
    agent: usize,
    kappa: usize,
    anchor: (&[usize], &[usize]),
) -> Result<TruncatedQTable> {
    truncate_q(cmdp, &full_q(cmdp, policy, r)?, agent, kappa, anchor)
}

/// `c0 = 2 gamma chi M_r / (2 - gamma chi)`; infinite when `gamma chi >= 2`.
pub fn truncation_constant(gamma: f64, chi: f64, m_r: f64) -> f64 {
    if gamma * chi >= 2.0 {
        f64::INFINITY
    } else {
        2.0 * gamma * chi * m_r / (2.0 - gamma * chi)
    }
}
