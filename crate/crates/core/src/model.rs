//! Factored constrained MDP on a dependence graph.
//!
//! Each agent `i` owns a local transition kernel `P_i(s_i' | s, a)` and a local
//! reward. Both declare the agents they read; the closures only ever receive
//! the state and action coordinates of those agents (ascending agent order),
//! so a kernel cannot observe anything outside its declared neighborhood.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::graph::DependenceGraph;
use crate::policy::KHopPolicy;
use crate::rng::sample_index;
use crate::space::MixedRadix;

/// Default limit on `|S||A|` for exact oracles.
pub const DEFAULT_ENUMERATION_CAP: usize = 4096;

const DIST_TOL: f64 = 1e-12;

pub type KernelFn = dyn Fn(&[usize], &[usize], &mut [f64]) + Send + Sync;
pub type RewardFn = dyn Fn(&[usize], &[usize]) -> f64 + Send + Sync;

type Gathered = SmallVec<[usize; 16]>;

#[derive(Clone)]
pub struct LocalKernel {
    deps: Vec<usize>,
    f: Arc<KernelFn>,
}

#[derive(Clone)]
pub struct LocalReward {
    deps: Vec<usize>,
    f: Arc<RewardFn>,
}

impl LocalKernel {
    pub fn deps(&self) -> &[usize] {
        &self.deps
    }
}

impl LocalReward {
    pub fn deps(&self) -> &[usize] {
        &self.deps
    }
}

fn gather(deps: &[usize], values: &[usize]) -> Gathered {
    deps.iter().map(|&j| values[j]).collect()
}

/// Networked CMDP with product state/action spaces and factored dynamics.
#[derive(Clone)]
pub struct FactoredCmdp {
    graph: DependenceGraph,
    state_sizes: Vec<usize>,
    action_sizes: Vec<usize>,
    kernels: Vec<LocalKernel>,
    rewards: Vec<LocalReward>,
    initial: Vec<Vec<f64>>,
    gamma: f64,
    enumeration_cap: usize,
}

impl fmt::Debug for FactoredCmdp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FactoredCmdp")
            .field("n", &self.n())
            .field("state_sizes", &self.state_sizes)
            .field("action_sizes", &self.action_sizes)
            .field("kernel_deps", &self.kernels.iter().map(|k| &k.deps).collect::<Vec<_>>())
            .field("gamma", &self.gamma)
            .finish()
    }
}

pub struct CmdpBuilder {
    graph: DependenceGraph,
    state_sizes: Vec<usize>,
    action_sizes: Vec<usize>,
    gamma: f64,
    kernels: Vec<Option<LocalKernel>>,
    rewards: Vec<Option<LocalReward>>,
    initial: Vec<Option<Vec<f64>>>,
    enumeration_cap: usize,
}

impl CmdpBuilder {
    /// Sets the kernel of agent `i`. The closure receives `(s_deps, a_deps, out)`
    /// and must write a distribution over `S_i` into `out` (pre-zeroed).
    pub fn kernel<F>(mut self, i: usize, deps: Vec<usize>, f: F) -> Self
    where
        F: Fn(&[usize], &[usize], &mut [f64]) + Send + Sync + 'static,
    {
        if let Some(slot) = self.kernels.get_mut(i) {
            *slot = Some(LocalKernel { deps, f: Arc::new(f) });
        }
        self
    }

    /// Sets the reward of agent `i`, a function of `(s_deps, a_deps)`.
    pub fn reward<F>(mut self, i: usize, deps: Vec<usize>, f: F) -> Self
    where
        F: Fn(&[usize], &[usize]) -> f64 + Send + Sync + 'static,
    {
        if let Some(slot) = self.rewards.get_mut(i) {
            *slot = Some(LocalReward { deps, f: Arc::new(f) });
        }
        self
    }

    /// Sets agent `i`'s factor of the (product) initial distribution.
    pub fn initial(mut self, i: usize, dist: Vec<f64>) -> Self {
        if let Some(slot) = self.initial.get_mut(i) {
            *slot = Some(dist);
        }
        self
    }

    pub fn enumeration_cap(mut self, cap: usize) -> Self {
        self.enumeration_cap = cap;
        self
    }

    pub fn build(self) -> Result<FactoredCmdp> {
        let n = self.graph.n();
        if self.state_sizes.len() != n || self.action_sizes.len() != n {
            return Err(Error::InvalidModel(format!(
                "expected {n} state and action sizes, got {} and {}",
                self.state_sizes.len(),
                self.action_sizes.len()
            )));
        }
        if self.state_sizes.iter().chain(&self.action_sizes).any(|&k| k == 0) {
            return Err(Error::InvalidModel("local spaces must be nonempty".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidModel(format!("gamma {} not in [0,1)", self.gamma)));
        }
        let check_deps = |what: &str, i: usize, deps: &mut Vec<usize>| -> Result<()> {
            deps.sort_unstable();
            deps.dedup();
            if let Some(&j) = deps.iter().find(|&&j| j >= n) {
                return Err(Error::InvalidModel(format!("{what} of agent {i} reads agent {j} >= {n}")));
            }
            Ok(())
        };

        let mut kernels = Vec::with_capacity(n);
        for (i, k) in self.kernels.into_iter().enumerate() {
            let mut k = k.ok_or_else(|| Error::InvalidModel(format!("agent {i} has no kernel")))?;
            check_deps("kernel", i, &mut k.deps)?;
            kernels.push(k);
        }
        let mut rewards = Vec::with_capacity(n);
        for (i, r) in self.rewards.into_iter().enumerate() {
            let mut r = r.unwrap_or_else(|| LocalReward { deps: vec![i], f: Arc::new(|_, _| 0.0) });
            check_deps("reward", i, &mut r.deps)?;
            rewards.push(r);
        }
        let mut initial = Vec::with_capacity(n);
        for (i, d) in self.initial.into_iter().enumerate() {
            let d = d.unwrap_or_else(|| {
                let mut v = vec![0.0; self.state_sizes[i]];
                v[0] = 1.0;
                v
            });
            if d.len() != self.state_sizes[i] || !is_distribution(&d) {
                return Err(Error::InvalidModel(format!("initial distribution of agent {i} is not a distribution over S_{i}")));
            }
            initial.push(d);
        }

        let cmdp = FactoredCmdp {
            graph: self.graph,
            state_sizes: self.state_sizes,
            action_sizes: self.action_sizes,
            kernels,
            rewards,
            initial,
            gamma: self.gamma,
            enumeration_cap: self.enumeration_cap,
        };
        for i in 0..n {
            cmdp.validate_kernel(i)?;
        }
        Ok(cmdp)
    }
}

/// Kernel dependency spaces up to this size are checked exhaustively at build time.
const KERNEL_VALIDATION_LIMIT: usize = 1 << 16;

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|&x| x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= DIST_TOL
}

impl FactoredCmdp {
    pub fn builder(
        graph: DependenceGraph,
        state_sizes: Vec<usize>,
        action_sizes: Vec<usize>,
        gamma: f64,
    ) -> CmdpBuilder {
        let n = graph.n();
        CmdpBuilder {
            graph,
            state_sizes,
            action_sizes,
            gamma,
            kernels: vec![None; n],
            rewards: vec![None; n],
            initial: vec![None; n],
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn graph(&self) -> &DependenceGraph {
        &self.graph
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn state_sizes(&self) -> &[usize] {
        &self.state_sizes
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    pub fn kernel(&self, i: usize) -> &LocalKernel {
        &self.kernels[i]
    }

    pub fn reward_fn(&self, i: usize) -> &LocalReward {
        &self.rewards[i]
    }

    pub fn initial(&self, i: usize) -> &[f64] {
        &self.initial[i]
    }

    pub fn enumeration_cap(&self) -> usize {
        self.enumeration_cap
    }

    /// Copy of the model with a different gamma.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidModel(format!("gamma {gamma} not in [0,1)")));
        }
        let mut out = self.clone();
        out.gamma = gamma;
        Ok(out)
    }

    pub fn with_enumeration_cap(mut self, cap: usize) -> Self {
        self.enumeration_cap = cap;
        self
    }

    fn validate_kernel(&self, i: usize) -> Result<()> {
        let deps = &self.kernels[i].deps;
        let radix = self.dep_radix(deps);
        if radix.size() > KERNEL_VALIDATION_LIMIT {
            return Ok(());
        }
        let mut digits = vec![0; radix.len()];
        let mut out = vec![0.0; self.state_sizes[i]];
        let (mut s, mut a) = (Vec::new(), Vec::new());
        for idx in 0..radix.size() {
            radix.decode_into(idx, &mut digits);
            s.clear();
            a.clear();
            for pair in digits.chunks(2) {
                s.push(pair[0]);
                a.push(pair[1]);
            }
            out.iter_mut().for_each(|x| *x = 0.0);
            (self.kernels[i].f)(&s, &a, &mut out);
            if !is_distribution(&out) {
                return Err(Error::InvalidModel(format!(
                    "kernel of agent {i} returned {out:?} at s_deps={s:?}, a_deps={a:?}"
                )));
            }
        }
        Ok(())
    }

    /// Interleaved radix `(S_d0, A_d0, S_d1, A_d1, ...)` over a dependency set.
    fn dep_radix(&self, deps: &[usize]) -> MixedRadix {
        MixedRadix::new(deps.iter().flat_map(|&j| [self.state_sizes[j], self.action_sizes[j]]).collect())
    }

    fn check_tuple(&self, what: &'static str, x: &[usize], sizes: &[usize]) -> Result<()> {
        if x.len() != sizes.len() {
            return Err(Error::malformed(what, format!("length {} != {}", x.len(), sizes.len())));
        }
        if let Some(i) = (0..x.len()).find(|&i| x[i] >= sizes[i]) {
            return Err(Error::malformed(what, format!("coordinate {i} = {} out of range {}", x[i], sizes[i])));
        }
        Ok(())
    }

    pub fn check_state(&self, s: &[usize]) -> Result<()> {
        self.check_tuple("state", s, &self.state_sizes)
    }

    pub fn check_action(&self, a: &[usize]) -> Result<()> {
        self.check_tuple("action", a, &self.action_sizes)
    }

    /// `P_i(. | s, a)` written into `out` (length `|S_i|`).
    pub fn local_transition(&self, i: usize, s: &[usize], a: &[usize], out: &mut [f64]) {
        let k = &self.kernels[i];
        let sd = gather(&k.deps, s);
        let ad = gather(&k.deps, a);
        out.iter_mut().for_each(|x| *x = 0.0);
        (k.f)(&sd, &ad, out);
    }

    /// `r_i(s_{deps}, a_{deps})`.
    pub fn reward(&self, i: usize, s: &[usize], a: &[usize]) -> f64 {
        let r = &self.rewards[i];
        (r.f)(&gather(&r.deps, s), &gather(&r.deps, a))
    }

    /// Samples `s'` with every `s_i'` drawn independently, in agent order.
    pub fn step<R: Rng + ?Sized>(&self, s: &[usize], a: &[usize], rng: &mut R) -> Result<Vec<usize>> {
        self.check_state(s)?;
        self.check_action(a)?;
        let mut next = vec![0; self.n()];
        self.step_into(s, a, rng, &mut next);
        Ok(next)
    }

    pub(crate) fn step_into<R: Rng + ?Sized>(&self, s: &[usize], a: &[usize], rng: &mut R, next: &mut [usize]) {
        let max_s = self.state_sizes.iter().copied().max().unwrap_or(1);
        let mut buf: SmallVec<[f64; 32]> = SmallVec::from_elem(0.0, max_s);
        for i in 0..self.n() {
            let out = &mut buf[..self.state_sizes[i]];
            self.local_transition(i, s, a, out);
            next[i] = sample_index(out, rng);
        }
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.initial.iter().map(|d| sample_index(d, rng)).collect()
    }

    pub fn sample_uniform_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.state_sizes.iter().map(|&k| rng.gen_range(0..k)).collect()
    }

    pub fn state_space(&self) -> MixedRadix {
        MixedRadix::new(self.state_sizes.clone())
    }

    pub fn action_space(&self) -> MixedRadix {
        MixedRadix::new(self.action_sizes.clone())
    }

    /// `|S||A|`, saturating.
    pub fn pair_count(&self) -> usize {
        self.state_space().size().saturating_mul(self.action_space().size())
    }

    pub fn check_cap(&self) -> Result<()> {
        let size = self.pair_count();
        if size > self.enumeration_cap {
            return Err(Error::EnumerationCap { size, cap: self.enumeration_cap });
        }
        Ok(())
    }

    /// Distribution over encoded global next states.
    pub fn next_state_distribution(&self, s: &[usize], a: &[usize]) -> Vec<f64> {
        let mut dist = vec![1.0];
        let max_s = self.state_sizes.iter().copied().max().unwrap_or(1);
        let mut local = vec![0.0; max_s];
        for i in 0..self.n() {
            let k = self.state_sizes[i];
            self.local_transition(i, s, a, &mut local[..k]);
            dist = kron(&dist, &local[..k]);
        }
        dist
    }

    /// Product initial distribution over encoded global states.
    pub fn initial_distribution(&self) -> Vec<f64> {
        self.initial.iter().fold(vec![1.0], |acc, d| kron(&acc, d))
    }
}

/// Kronecker product with the first factor most significant.
pub(crate) fn kron(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

/// Enumerated global product space with pairs indexed `s * |A| + a`.
#[derive(Debug, Clone)]
pub struct GlobalSpace {
    pub states: MixedRadix,
    pub actions: MixedRadix,
    pub state_tuples: Vec<Vec<usize>>,
    pub action_tuples: Vec<Vec<usize>>,
}

impl GlobalSpace {
    pub fn new(cmdp: &FactoredCmdp) -> Result<Self> {
        cmdp.check_cap()?;
        let states = cmdp.state_space();
        let actions = cmdp.action_space();
        let state_tuples = (0..states.size()).map(|k| states.decode(k)).collect();
        let action_tuples = (0..actions.size()).map(|k| actions.decode(k)).collect();
        Ok(Self { states, actions, state_tuples, action_tuples })
    }

    pub fn n_states(&self) -> usize {
        self.states.size()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.size()
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states() * self.n_actions()
    }

    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions() + a
    }

    pub fn split(&self, pair: usize) -> (usize, usize) {
        (pair / self.n_actions(), pair % self.n_actions())
    }
}

/// Joint policy table `pi(a | s)` over encoded global indices.
pub(crate) fn joint_policy_table(space: &GlobalSpace, policy: &KHopPolicy) -> Vec<Vec<f64>> {
    space
        .state_tuples
        .iter()
        .map(|s| {
            (0..policy.n()).fold(vec![1.0], |acc, i| kron(&acc, &policy.probs_at_global(i, s)))
        })
        .collect()
}

/// `P^pi((s',a'),(s,a)) = P(s'|s,a) pi(a'|s')`; every column sums to one.
pub fn global_transition_matrix(cmdp: &FactoredCmdp, policy: &KHopPolicy) -> Result<DMatrix<f64>> {
    let space = GlobalSpace::new(cmdp)?;
    policy.check_compatible(cmdp)?;
    Ok(transition_matrix_in(cmdp, &space, &joint_policy_table(&space, policy)))
}

pub(crate) fn transition_matrix_in(cmdp: &FactoredCmdp, space: &GlobalSpace, pi: &[Vec<f64>]) -> DMatrix<f64> {
    let np = space.n_pairs();
    let na = space.n_actions();
    let mut p = DMatrix::zeros(np, np);
    for (si, s) in space.state_tuples.iter().enumerate() {
        for (ai, a) in space.action_tuples.iter().enumerate() {
            let col = space.pair(si, ai);
            let next = cmdp.next_state_distribution(s, a);
            for (sn, &ps) in next.iter().enumerate() {
                if ps == 0.0 {
                    continue;
                }
                for (an, &pa) in pi[sn].iter().enumerate() {
                    p[(sn * na + an, col)] = ps * pa;
                }
            }
        }
    }
    p
}

/// Transition-sensitivity bounds between agents.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayProfile {
    /// `m[i][j]`: largest L1 change of `P_i` when only agent `j`'s pair moves.
    pub m: Vec<Vec<f64>>,
    /// Largest decay exponent meeting the mass budget (capped at [`OMEGA_MAX`]).
    pub omega: f64,
    pub chi: f64,
    /// `exp(-omega)`; 1 when no `omega > 0` is feasible.
    pub phi0: f64,
    /// Whether some `omega > 0` satisfies `max_i sum_j e^{omega d(i,j)} M_ij <= chi`.
    pub feasible: bool,
    /// Whether `chi < 2 / gamma`.
    pub chi_below_two_over_gamma: bool,
}

pub const OMEGA_MAX: f64 = 50.0;

impl DecayProfile {
    /// `max_i sum_j e^{omega d(i,j)} M_ij`.
    pub fn weighted_mass(&self, graph: &DependenceGraph, omega: f64) -> f64 {
        weighted_mass(&self.m, graph, omega)
    }
}

fn weighted_mass(m: &[Vec<f64>], graph: &DependenceGraph, omega: f64) -> f64 {
    m.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &x)| x > 0.0)
                .map(|(j, &x)| (omega * graph.distance(i, j) as f64).exp() * x)
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Brute-force sensitivity matrix plus the decay exponent for mass budget `chi`.
pub fn compute_decay_matrix(cmdp: &FactoredCmdp, chi: f64) -> Result<DecayProfile> {
    let n = cmdp.n();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        let deps = cmdp.kernels[i].deps.clone();
        let radix = cmdp.dep_radix(&deps);
        if radix.size() > cmdp.enumeration_cap {
            return Err(Error::EnumerationCap { size: radix.size(), cap: cmdp.enumeration_cap });
        }
        let si = cmdp.state_sizes[i];
        let mut table = vec![0.0; radix.size() * si];
        let mut digits = vec![0; radix.len()];
        let (mut s, mut a) = (Vec::new(), Vec::new());
        for idx in 0..radix.size() {
            radix.decode_into(idx, &mut digits);
            s.clear();
            a.clear();
            for pair in digits.chunks(2) {
                s.push(pair[0]);
                a.push(pair[1]);
            }
            (cmdp.kernels[i].f)(&s, &a, &mut table[idx * si..(idx + 1) * si]);
        }
        for (pos, &j) in deps.iter().enumerate() {
            let (sj, aj) = (cmdp.state_sizes[j], cmdp.action_sizes[j]);
            let mut sup = 0.0f64;
            for idx in 0..radix.size() {
                radix.decode_into(idx, &mut digits);
                for alt_s in 0..sj {
                    for alt_a in 0..aj {
                        let mut alt = digits.clone();
                        alt[2 * pos] = alt_s;
                        alt[2 * pos + 1] = alt_a;
                        let jdx = radix.encode(&alt);
                        if jdx <= idx {
                            continue;
                        }
                        let p = &table[idx * si..(idx + 1) * si];
                        let q = &table[jdx * si..(jdx + 1) * si];
                        let l1: f64 = p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum();
                        sup = sup.max(l1);
                    }
                }
            }
            m[i][j] = sup;
        }
    }

    let graph = &cmdp.graph;
    let feasible_at = |omega: f64| weighted_mass(&m, graph, omega) <= chi;
    let (omega, feasible) = if !feasible_at(0.0) {
        (0.0, false)
    } else if feasible_at(OMEGA_MAX) {
        (OMEGA_MAX, true)
    } else {
        let (mut lo, mut hi) = (0.0, OMEGA_MAX);
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if feasible_at(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, lo > 0.0)
    };
    Ok(DecayProfile {
        m,
        omega,
        chi,
        phi0: if feasible { (-omega).exp() } else { 1.0 },
        feasible,
        chi_below_two_over_gamma: chi * cmdp.gamma < 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{synthetic_line, SyntheticLineSpec};
    use crate::rng::{stream, Purpose};

    fn chain(n: usize) -> FactoredCmdp {
        synthetic_line(&SyntheticLineSpec { n, gamma: 0.9, ..Default::default() }).unwrap()
    }

    #[test]
    fn kernel_reading_outside_declared_deps_cannot_build() {
        let g = DependenceGraph::line(2).unwrap();
        // declared deps [0] so the closure sees one coordinate; indexing [1] panics,
        // which surfaces at construction through exhaustive validation
        let res = std::panic::catch_unwind(|| {
            FactoredCmdp::builder(g.clone(), vec![2, 2], vec![1, 1], 0.5)
                .kernel(0, vec![0], |s, _, out| out[s[1]] = 1.0)
                .kernel(1, vec![1], |_, _, out| out[0] = 1.0)
                .build()
        });
        assert!(res.is_err());
        let bad = FactoredCmdp::builder(g, vec![2, 2], vec![1, 1], 0.5)
            .kernel(0, vec![0, 5], |_, _, out| out[0] = 1.0)
            .kernel(1, vec![1], |_, _, out| out[0] = 1.0)
            .build();
        assert!(matches!(bad, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn non_distribution_kernel_rejected() {
        let g = DependenceGraph::line(1).unwrap();
        let bad = FactoredCmdp::builder(g, vec![2], vec![1], 0.5)
            .kernel(0, vec![0], |_, _, out| out[0] = 0.7)
            .build();
        assert!(bad.is_err());
    }

    #[test]
    fn gamma_must_be_below_one() {
        let g = DependenceGraph::line(1).unwrap();
        let bad = FactoredCmdp::builder(g, vec![1], vec![1], 1.0)
            .kernel(0, vec![0], |_, _, out| out[0] = 1.0)
            .build();
        assert!(bad.is_err());
    }

    #[test]
    fn step_rejects_malformed_tuples() {
        let m = chain(3);
        let mut rng = stream(0, Purpose::Verify, 0, 0);
        assert!(m.step(&[0, 0], &[0, 0, 0], &mut rng).is_err());
        assert!(m.step(&[0, 2, 0], &[0, 0, 0], &mut rng).is_err());
        assert!(m.step(&[0, 0, 0], &[0, 0, 1], &mut rng).is_ok());
    }

    #[test]
    fn deterministic_kernel_always_lands_on_its_point() {
        let g = DependenceGraph::line(1).unwrap();
        let m = FactoredCmdp::builder(g, vec![3], vec![1], 0.5)
            .kernel(0, vec![0], |_, _, out| out[2] = 1.0)
            .build()
            .unwrap();
        let mut rng = stream(3, Purpose::Verify, 0, 0);
        for _ in 0..200 {
            assert_eq!(m.step(&[0], &[0], &mut rng).unwrap(), vec![2]);
        }
    }

    #[test]
    fn step_is_deterministic_given_stream() {
        let m = chain(5);
        let run = || {
            let mut rng = stream(11, Purpose::Verify, 0, 0);
            let mut s = vec![0; 5];
            let mut out = Vec::new();
            for _ in 0..50 {
                s = m.step(&s, &[1, 1, 1, 1, 1], &mut rng).unwrap();
                out.push(s.clone());
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn product_of_locals_is_a_distribution() {
        let m = chain(3);
        let space = GlobalSpace::new(&m).unwrap();
        for s in &space.state_tuples {
            for a in &space.action_tuples {
                let total: f64 = m.next_state_distribution(s, a).iter().sum();
                assert!((total - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_agent_chain_decay_matrix() {
        // Oracle: head copies s_2 (|P(.|0) - P(.|1)|_1 = 2), tail copies a_2 (= 2).
        let d = compute_decay_matrix(&chain(2), 3.0).unwrap();
        assert_eq!(d.m, vec![vec![0.0, 2.0], vec![0.0, 2.0]]);
        // max(2 e^w, 2) <= 3  =>  w = ln 1.5
        assert!((d.omega - 1.5f64.ln()).abs() < 1e-5);
        assert!((d.phi0 - 2.0 / 3.0).abs() < 1e-5);
        assert!(d.feasible);
        assert!(d.chi_below_two_over_gamma == (3.0 * 0.9 < 2.0));
    }

    #[test]
    fn decoupled_agents_have_diagonal_sensitivity() {
        let g = DependenceGraph::line(3).unwrap();
        let mut b = FactoredCmdp::builder(g, vec![2; 3], vec![2; 3], 0.9);
        for i in 0..3 {
            b = b.kernel(i, vec![i], |s, a, out| {
                let p1 = if a[0] == 1 { 0.9 } else if s[0] == 1 { 0.5 } else { 0.1 };
                out[1] = p1;
                out[0] = 1.0 - p1;
            });
        }
        let d = compute_decay_matrix(&b.build().unwrap(), 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(d.m[i][j], 0.0);
                }
            }
            assert!(d.m[i][i] > 0.0);
        }
        assert_eq!(d.omega, OMEGA_MAX);
    }

    #[test]
    fn synthetic_middle_agent_sensitivity_is_local() {
        let n = 6;
        let d = compute_decay_matrix(&chain(n), 10.0).unwrap();
        for i in 1..n - 1 {
            // a_i 1 vs 0 with s_{i+1}=1 moves all mass; s_{i+1} moves 0.2 of it
            assert_eq!(d.m[i][i], 2.0);
            assert!((d.m[i][i + 1] - 0.4).abs() < 1e-12);
            for j in 0..n {
                if j != i && j != i + 1 {
                    assert_eq!(d.m[i][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn infeasible_budget_reported() {
        let d = compute_decay_matrix(&chain(2), 1.0).unwrap();
        assert!(!d.feasible);
        assert_eq!(d.phi0, 1.0);
    }
}
