//! Discounted occupancy measures: empirical estimates from trajectory batches
//! and exact solutions of the linear flow equations.
//!
//! All occupancies are unnormalized: an exact table sums to `1/(1-gamma)` and
//! an empirical table over horizon `H` sums to `(1-gamma^H)/(1-gamma)`.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::error::{Error, Result};
use crate::model::{joint_policy_table, transition_matrix_in, FactoredCmdp, GlobalSpace};
use crate::policy::KHopPolicy;
use crate::rollout::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassConvention {
    /// Infinite-horizon, mass `1/(1-gamma)`.
    ExactInfinite,
    /// Truncated at horizon `H`, mass `sum_{k<H} gamma^k`.
    EmpiricalH(usize),
}

/// Occupancy table of one agent indexed `s_i * |A_i| + a_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOccupancy {
    pub agent: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub table: Vec<f64>,
    pub convention: MassConvention,
}

impl LocalOccupancy {
    pub fn new(agent: usize, n_states: usize, n_actions: usize, table: Vec<f64>, convention: MassConvention) -> Result<Self> {
        if table.len() != n_states * n_actions {
            return Err(Error::ShapeMismatch(format!(
                "occupancy table has {} entries, expected {}x{}",
                table.len(),
                n_states,
                n_actions
            )));
        }
        Ok(Self { agent, n_states, n_actions, table, convention })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.table[s * self.n_actions + a]
    }

    pub fn mass(&self) -> f64 {
        self.table.iter().sum()
    }

    /// `m(a) = sum_s lambda(s, a)`.
    pub fn action_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_actions];
        for (k, v) in self.table.iter().enumerate() {
            m[k % self.n_actions] += v;
        }
        m
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        self.table.iter().zip(&other.table).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.table.iter().zip(&other.table).map(|(x, y)| (x - y).abs()).sum()
    }

    /// Rows `agent,s,a,value`, no header.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        for (k, v) in self.table.iter().enumerate() {
            writeln!(w, "{},{},{},{:?}", self.agent, k / self.n_actions, k % self.n_actions, v)?;
        }
        Ok(())
    }
}

/// `d_i(s) = (1-gamma) sum_a lambda_i(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMarginal {
    pub d: Vec<f64>,
}

pub fn state_marginal(lambda: &LocalOccupancy, gamma: f64) -> StateMarginal {
    let na = lambda.n_actions;
    let d = (0..lambda.n_states)
        .map(|s| (1.0 - gamma) * lambda.table[s * na..(s + 1) * na].iter().sum::<f64>())
        .collect();
    StateMarginal { d }
}

/// `(1/B) sum_tau sum_{k<H} gamma^k 1(s_i^k, a_i^k)`.
pub fn estimate_local_occupancy(
    batch: &[Trajectory],
    agent: usize,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    horizon: usize,
) -> Result<LocalOccupancy> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for (index, t) in batch.iter().enumerate() {
        if t.len() != horizon {
            return Err(Error::RaggedBatch { index, len: t.len(), expected: horizon });
        }
        if agent >= t.n() {
            return Err(Error::AgentOutOfRange { agent, n: t.n() });
        }
    }
    let mut table = vec![0.0; n_states * n_actions];
    let w = 1.0 / batch.len() as f64;
    for t in batch {
        let mut disc = w;
        for k in 0..horizon {
            let (s, a) = (t.state(k)[agent], t.action(k)[agent]);
            if s >= n_states || a >= n_actions {
                return Err(Error::malformed("trajectory", format!("agent {agent} pair ({s},{a}) out of range")));
            }
            table[s * n_actions + a] += disc;
            disc *= gamma;
        }
    }
    LocalOccupancy::new(agent, n_states, n_actions, table, MassConvention::EmpiricalH(horizon))
}

/// `sum_{k<H} gamma^k`.
pub fn truncated_mass(gamma: f64, horizon: usize) -> f64 {
    let mut acc = 0.0;
    let mut g = 1.0;
    for _ in 0..horizon {
        acc += g;
        g *= gamma;
    }
    acc
}

/// Occupancy over global pairs `s * |A| + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalOccupancy {
    pub table: Vec<f64>,
    pub gamma: f64,
}

impl GlobalOccupancy {
    pub fn mass(&self) -> f64 {
        self.table.iter().sum()
    }
}

/// Dense linear-algebra view of a model under a fixed policy, valid under the
/// enumeration cap. Both factorizations are computed on first use.
pub struct ExactSystem<'a> {
    cmdp: &'a FactoredCmdp,
    space: GlobalSpace,
    pi: Vec<Vec<f64>>,
    p: DMatrix<f64>,
    lu_occ: OnceLock<LU<f64, Dyn, Dyn>>,
    lu_q: OnceLock<LU<f64, Dyn, Dyn>>,
    occupancy: OnceLock<GlobalOccupancy>,
}

impl<'a> ExactSystem<'a> {
    pub fn new(cmdp: &'a FactoredCmdp, policy: &KHopPolicy) -> Result<Self> {
        let space = GlobalSpace::new(cmdp)?;
        policy.check_compatible(cmdp)?;
        let pi = joint_policy_table(&space, policy);
        let p = transition_matrix_in(cmdp, &space, &pi);
        Ok(Self {
            cmdp,
            space,
            pi,
            p,
            lu_occ: OnceLock::new(),
            lu_q: OnceLock::new(),
            occupancy: OnceLock::new(),
        })
    }

    pub fn cmdp(&self) -> &FactoredCmdp {
        self.cmdp
    }

    pub fn space(&self) -> &GlobalSpace {
        &self.space
    }

    /// Joint policy `pi[s][a]` over encoded indices.
    pub fn joint_policy(&self) -> &[Vec<f64>] {
        &self.pi
    }

    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// `rho^pi(s, a) = rho(s) pi(a | s)`.
    pub fn rho_pi(&self) -> Vec<f64> {
        let rho = self.cmdp.initial_distribution();
        let na = self.space.n_actions();
        let mut out = vec![0.0; self.space.n_pairs()];
        for (s, &r) in rho.iter().enumerate() {
            for a in 0..na {
                out[s * na + a] = r * self.pi[s][a];
            }
        }
        out
    }

    fn system(&self, transpose: bool) -> DMatrix<f64> {
        let np = self.space.n_pairs();
        let g = self.cmdp.gamma();
        let mut m = DMatrix::<f64>::identity(np, np);
        if transpose {
            m -= self.p.transpose() * g;
        } else {
            m -= &self.p * g;
        }
        m
    }

    /// `lambda = (I - gamma P^pi)^{-1} rho^pi`.
    pub fn occupancy(&self) -> Result<&GlobalOccupancy> {
        if let Some(o) = self.occupancy.get() {
            return Ok(o);
        }
        let lu = self.lu_occ.get_or_init(|| self.system(false).lu());
        let x = lu.solve(&DVector::from_vec(self.rho_pi())).ok_or(Error::Singular)?;
        let occ = GlobalOccupancy { table: x.as_slice().to_vec(), gamma: self.cmdp.gamma() };
        Ok(self.occupancy.get_or_init(|| occ))
    }

    /// Solves `Q = r + gamma P Q` where `(P Q)(s,a) = sum P(s'|s,a) pi(a'|s') Q(s',a')`.
    pub fn q_values(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.space.n_pairs() {
            return Err(Error::ShapeMismatch(format!("reward has {} entries, expected {}", r.len(), self.space.n_pairs())));
        }
        if r.iter().any(|x| x.is_nan()) {
            return Err(Error::NaN("reward"));
        }
        let lu = self.lu_q.get_or_init(|| self.system(true).lu());
        let x = lu.solve(&DVector::from_column_slice(r)).ok_or(Error::Singular)?;
        Ok(x.as_slice().to_vec())
    }

    /// Expands a local table over the agent's own `(s_i, a_i)` to global pairs.
    pub fn lift_local(&self, agent: usize, local: &[f64]) -> Vec<f64> {
        let na_i = self.cmdp.action_sizes()[agent];
        let mut out = Vec::with_capacity(self.space.n_pairs());
        for s in &self.space.state_tuples {
            for a in &self.space.action_tuples {
                out.push(local[s[agent] * na_i + a[agent]]);
            }
        }
        out
    }

    /// Environment reward of agent `i` over global pairs.
    pub fn env_reward(&self, agent: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.space.n_pairs());
        for s in &self.space.state_tuples {
            for a in &self.space.action_tuples {
                out.push(self.cmdp.reward(agent, s, a));
            }
        }
        out
    }

    pub fn local_occupancy(&self, agent: usize) -> Result<LocalOccupancy> {
        Ok(marginalize_in(self.occupancy()?, &self.space, self.cmdp, agent))
    }

    /// Largest flow-balance residual
    /// `|sum_a lambda(s,a) - rho(s) - gamma sum P(s|s',a') lambda(s',a')|`.
    pub fn flow_balance_residual(&self, occ: &GlobalOccupancy) -> f64 {
        let rho = self.cmdp.initial_distribution();
        let na = self.space.n_actions();
        let ns = self.space.n_states();
        let mut inflow = vec![0.0; ns];
        for (si, s) in self.space.state_tuples.iter().enumerate() {
            for (ai, a) in self.space.action_tuples.iter().enumerate() {
                let w = occ.table[si * na + ai];
                if w == 0.0 {
                    continue;
                }
                for (sn, p) in self.cmdp.next_state_distribution(s, a).into_iter().enumerate() {
                    inflow[sn] += p * w;
                }
            }
        }
        (0..ns)
            .map(|s| {
                let lhs: f64 = occ.table[s * na..(s + 1) * na].iter().sum();
                (lhs - rho[s] - occ.gamma * inflow[s]).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn exact_global_occupancy(cmdp: &FactoredCmdp, policy: &KHopPolicy) -> Result<GlobalOccupancy> {
    ExactSystem::new(cmdp, policy)?.occupancy().cloned()
}

/// `lambda_i(s_i, a_i) = sum_{s_-i, a_-i} lambda(s, a)`.
pub fn marginalize(lambda: &GlobalOccupancy, cmdp: &FactoredCmdp, agent: usize) -> Result<LocalOccupancy> {
    if agent >= cmdp.n() {
        return Err(Error::AgentOutOfRange { agent, n: cmdp.n() });
    }
    let space = GlobalSpace::new(cmdp)?;
    if lambda.table.len() != space.n_pairs() {
        return Err(Error::ShapeMismatch("occupancy does not match model".into()));
    }
    Ok(marginalize_in(lambda, &space, cmdp, agent))
}

fn marginalize_in(lambda: &GlobalOccupancy, space: &GlobalSpace, cmdp: &FactoredCmdp, agent: usize) -> LocalOccupancy {
    let (ns, na) = (cmdp.state_sizes()[agent], cmdp.action_sizes()[agent]);
    let mut table = vec![0.0; ns * na];
    let nact = space.n_actions();
    for (k, &v) in lambda.table.iter().enumerate() {
        let (s, a) = (k / nact, k % nact);
        table[space.state_tuples[s][agent] * na + space.action_tuples[a][agent]] += v;
    }
    LocalOccupancy { agent, n_states: ns, n_actions: na, table, convention: MassConvention::ExactInfinite }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{synthetic_line, SyntheticLineSpec};
    use crate::graph::DependenceGraph;

    fn single(ns: usize, kernel: fn(&[usize], &[usize], &mut [f64]), gamma: f64) -> FactoredCmdp {
        FactoredCmdp::builder(DependenceGraph::line(1).unwrap(), vec![ns], vec![1], gamma)
            .kernel(0, vec![0], kernel)
            .build()
            .unwrap()
    }

    fn traj(pairs: &[(usize, usize)]) -> Trajectory {
        let mut t = Trajectory::with_capacity(1, pairs.len());
        for &(s, a) in pairs {
            t.push(&[s], &[a], &[0.0]);
        }
        t
    }

    #[test]
    fn empirical_two_step_example() {
        let occ = estimate_local_occupancy(&[traj(&[(0, 0), (1, 0)])], 0, 2, 1, 0.5, 2).unwrap();
        assert_eq!(occ.table, vec![1.0, 0.5]);
        assert_eq!(occ.mass(), 1.5);
    }

    #[test]
    fn identical_trajectories_average_to_one() {
        let t = traj(&[(0, 1), (1, 0), (1, 1)]);
        let one = estimate_local_occupancy(std::slice::from_ref(&t), 0, 2, 2, 0.7, 3).unwrap();
        let many = estimate_local_occupancy(&vec![t; 4], 0, 2, 2, 0.7, 3).unwrap();
        for (a, b) in one.table.iter().zip(&many.table) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_errors() {
        assert!(matches!(estimate_local_occupancy(&[], 0, 2, 1, 0.5, 2), Err(Error::EmptyBatch)));
        let bad = vec![traj(&[(0, 0), (1, 0)]), traj(&[(0, 0)])];
        assert!(matches!(estimate_local_occupancy(&bad, 0, 2, 1, 0.5, 2), Err(Error::RaggedBatch { index: 1, .. })));
    }

    #[test]
    fn single_state_geometric_series() {
        let m = single(1, |_, _, out| out[0] = 1.0, 0.9);
        let p = KHopPolicy::for_model(&m, 0, 50.0).unwrap();
        let occ = exact_global_occupancy(&m, &p).unwrap();
        assert!((occ.table[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn absorbing_chain() {
        let m = single(2, |_, _, out| out[1] = 1.0, 0.5);
        let p = KHopPolicy::for_model(&m, 0, 50.0).unwrap();
        let occ = exact_global_occupancy(&m, &p).unwrap();
        assert!((occ.table[0] - 1.0).abs() < 1e-12);
        assert!((occ.table[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_agent_marginal_is_identity() {
        let m = single(2, |s, _, out| out[1 - s[0]] = 1.0, 0.8);
        let p = KHopPolicy::for_model(&m, 0, 50.0).unwrap();
        let occ = exact_global_occupancy(&m, &p).unwrap();
        assert_eq!(marginalize(&occ, &m, 0).unwrap().table, occ.table);
    }

    #[test]
    fn state_marginal_examples() {
        let exact = LocalOccupancy::new(0, 2, 2, vec![1.0, 2.0, 3.0, 4.0], MassConvention::ExactInfinite).unwrap();
        let d = state_marginal(&exact, 0.9);
        assert!((d.d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let point = LocalOccupancy::new(0, 3, 1, vec![0.0, 10.0, 0.0], MassConvention::ExactInfinite).unwrap();
        let d = state_marginal(&point, 0.9);
        assert!((d.d[1] - 1.0).abs() < 1e-12 && d.d[0] == 0.0 && d.d[2] == 0.0);
        let emp = estimate_local_occupancy(&[traj(&vec![(0, 0); 100])], 0, 1, 1, 0.99, 100).unwrap();
        let d = state_marginal(&emp, 0.99);
        assert!((d.d[0] - (1.0 - 0.99f64.powi(100))).abs() < 1e-12);
        assert!((d.d[0] - 0.634).abs() < 1e-3);
    }

    #[test]
    fn independent_agents_factorize() {
        let g = DependenceGraph::new(2, &[]).unwrap();
        let m = FactoredCmdp::builder(g, vec![2, 2], vec![1, 1], 0.8)
            .kernel(0, vec![0], |s, _, out| out[1 - s[0]] = 1.0)
            .kernel(1, vec![1], |_, _, out| {
                out[0] = 0.3;
                out[1] = 0.7;
            })
            .build()
            .unwrap();
        let p = KHopPolicy::for_model(&m, 0, 50.0).unwrap();
        let occ = exact_global_occupancy(&m, &p).unwrap();
        let l0 = marginalize(&occ, &m, 0).unwrap();
        // agent 0 alone: alternates 0,1,0,... from 0
        let solo = single(2, |s, _, out| out[1 - s[0]] = 1.0, 0.8);
        let solo_occ = exact_global_occupancy(&solo, &KHopPolicy::for_model(&solo, 0, 50.0).unwrap()).unwrap();
        for (a, b) in l0.table.iter().zip(&solo_occ.table) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_occupancy_matches_power_series() {
        let m = synthetic_line(&SyntheticLineSpec { n: 2, gamma: 0.9, ..Default::default() }).unwrap();
        let p = KHopPolicy::for_model(&m, 1, 50.0).unwrap();
        let theta = p.thetas().iter().map(|t| t.iter().enumerate().map(|(k, _)| if k % 2 == 1 { 50.0 } else { -50.0 }).collect()).collect();
        let p = p.with_theta(theta).unwrap();
        let sys = ExactSystem::new(&m, &p).unwrap();
        let occ = sys.occupancy().unwrap();
        assert_eq!(occ.table.len(), 16);
        assert!((occ.mass() - 10.0).abs() < 1e-8);
        assert!(sys.flow_balance_residual(occ) < 1e-8);
        let mut term = DVector::from_vec(sys.rho_pi());
        let mut acc = term.clone();
        for _ in 1..500 {
            term = sys.transition_matrix() * term * 0.9;
            acc += &term;
        }
        for (x, y) in acc.iter().zip(&occ.table) {
            assert!((x - y).abs() < 1e-8);
        }
        // "always act 1" from (0,0): s = (0,0), (0,1), (1,1), (1,1), ...
        let na = 4;
        let idx = |s: usize| s * na + 3;
        assert!((occ.table[idx(0)] - 1.0).abs() < 1e-6);
        assert!((occ.table[idx(1)] - 0.9).abs() < 1e-6);
        assert!((occ.table[idx(3)] - 8.1).abs() < 1e-6);
        let l0 = sys.local_occupancy(0).unwrap();
        assert!((l0.get(0, 1) - 1.9).abs() < 1e-6);
    }
}
