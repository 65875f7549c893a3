//! Tabular softmax policies that read only the κ-hop neighborhood state.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::DependenceGraph;
use crate::model::FactoredCmdp;
use crate::rng::sample_index;
use crate::space::MixedRadix;

pub const DEFAULT_THETA_BAR: f64 = 50.0;
/// Per-agent table size limit.
pub const MAX_TABLE_ENTRIES: usize = 1_000_000;

/// `pi_i(a_i | s_{N_i^kappa}) = softmax(theta_i[s_nbhd, .])`.
///
/// `theta[i]` is row-major with one row of `|A_i|` logits per encoded
/// neighborhood state. Neighborhood states are encoded mixed-radix over the
/// neighborhood agents in ascending order, first agent most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct KHopPolicy {
    kappa: usize,
    theta_bar: f64,
    neighborhoods: Vec<Vec<usize>>,
    radices: Vec<MixedRadix>,
    action_sizes: Vec<usize>,
    state_sizes: Vec<usize>,
    theta: Vec<Vec<f64>>,
}

/// Score `grad_theta_i log pi_i(a | s_nbhd)`: nonzero only on row `row`.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub row: usize,
    pub values: Vec<f64>,
}

impl Score {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Softmax with max-subtraction.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

impl KHopPolicy {
    /// Zero-initialized (uniform) policy.
    pub fn uniform(
        graph: &DependenceGraph,
        state_sizes: &[usize],
        action_sizes: &[usize],
        kappa: usize,
        theta_bar: f64,
    ) -> Result<Self> {
        let n = graph.n();
        if state_sizes.len() != n || action_sizes.len() != n {
            return Err(Error::ShapeMismatch(format!("expected {n} local spaces")));
        }
        if !(theta_bar > 0.0 && theta_bar.is_finite()) {
            return Err(Error::config("theta_bar", "must be positive and finite"));
        }
        let mut neighborhoods = Vec::with_capacity(n);
        let mut radices = Vec::with_capacity(n);
        let mut theta = Vec::with_capacity(n);
        for i in 0..n {
            let nb = graph.khop_neighborhood(i, kappa)?;
            let radix = MixedRadix::new(nb.iter().map(|&j| state_sizes[j]).collect());
            let entries = radix.size().saturating_mul(action_sizes[i]);
            if entries > MAX_TABLE_ENTRIES {
                return Err(Error::TableTooLarge { agent: i, entries, limit: MAX_TABLE_ENTRIES });
            }
            theta.push(vec![0.0; entries]);
            neighborhoods.push(nb);
            radices.push(radix);
        }
        Ok(Self {
            kappa,
            theta_bar,
            neighborhoods,
            radices,
            action_sizes: action_sizes.to_vec(),
            state_sizes: state_sizes.to_vec(),
            theta,
        })
    }

    pub fn for_model(cmdp: &FactoredCmdp, kappa: usize, theta_bar: f64) -> Result<Self> {
        Self::uniform(cmdp.graph(), cmdp.state_sizes(), cmdp.action_sizes(), kappa, theta_bar)
    }

    /// Replaces all tables, projecting onto the box.
    pub fn with_theta(mut self, theta: Vec<Vec<f64>>) -> Result<Self> {
        self.check_shape(&theta)?;
        self.theta = self.project_params(theta);
        Ok(self)
    }

    /// Induced κ-hop policy of a policy that reads more agents: states outside
    /// the new neighborhood are frozen at `anchor_state`.
    pub fn induced(&self, graph: &DependenceGraph, kappa: usize, anchor_state: &[usize]) -> Result<Self> {
        let mut out = Self::uniform(graph, &self.state_sizes, &self.action_sizes, kappa, self.theta_bar)?;
        let mut s = anchor_state.to_vec();
        for i in 0..self.n() {
            let na = self.action_sizes[i];
            let nb = out.neighborhoods[i].clone();
            for row in 0..out.radices[i].size() {
                let digits = out.radices[i].decode(row);
                for (&j, &d) in nb.iter().zip(&digits) {
                    s[j] = d;
                }
                let src = self.nbhd_index(i, &s);
                out.theta[i][row * na..(row + 1) * na].copy_from_slice(&self.theta[i][src * na..(src + 1) * na]);
                for &j in &nb {
                    s[j] = anchor_state[j];
                }
            }
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn theta_bar(&self) -> f64 {
        self.theta_bar
    }

    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    pub fn n_nbhd_states(&self, i: usize) -> usize {
        self.radices[i].size()
    }

    pub fn n_actions(&self, i: usize) -> usize {
        self.action_sizes[i]
    }

    pub fn state_sizes(&self) -> &[usize] {
        &self.state_sizes
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        &self.theta[i]
    }

    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.theta
    }

    pub fn num_params(&self) -> usize {
        self.theta.iter().map(Vec::len).sum()
    }

    pub fn check_compatible(&self, cmdp: &FactoredCmdp) -> Result<()> {
        if cmdp.state_sizes() != self.state_sizes.as_slice() || cmdp.action_sizes() != self.action_sizes.as_slice() {
            return Err(Error::ShapeMismatch("policy spaces differ from model spaces".into()));
        }
        Ok(())
    }

    pub fn check_shape(&self, theta: &[Vec<f64>]) -> Result<()> {
        if theta.len() != self.n() {
            return Err(Error::ShapeMismatch(format!("{} parameter tables for {} agents", theta.len(), self.n())));
        }
        for (i, (t, own)) in theta.iter().zip(&self.theta).enumerate() {
            if t.len() != own.len() {
                return Err(Error::ShapeMismatch(format!("agent {i}: {} parameters, expected {}", t.len(), own.len())));
            }
        }
        Ok(())
    }

    /// Encoded neighborhood state of agent `i` read off a global state.
    pub fn nbhd_index(&self, i: usize, s: &[usize]) -> usize {
        self.radices[i].encode_sub(&self.neighborhoods[i], s)
    }

    fn check_row(&self, i: usize, s_nbhd: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::AgentOutOfRange { agent: i, n: self.n() });
        }
        if s_nbhd >= self.radices[i].size() {
            return Err(Error::malformed(
                "neighborhood state",
                format!("index {s_nbhd} >= {} for agent {i}", self.radices[i].size()),
            ));
        }
        Ok(())
    }

    pub fn logits(&self, i: usize, s_nbhd: usize) -> &[f64] {
        let na = self.action_sizes[i];
        &self.theta[i][s_nbhd * na..(s_nbhd + 1) * na]
    }

    pub fn action_probabilities(&self, i: usize, s_nbhd: usize) -> Result<Vec<f64>> {
        self.check_row(i, s_nbhd)?;
        let mut out = vec![0.0; self.action_sizes[i]];
        softmax_into(self.logits(i, s_nbhd), &mut out);
        Ok(out)
    }

    pub(crate) fn probs_into(&self, i: usize, s_nbhd: usize, out: &mut [f64]) {
        softmax_into(self.logits(i, s_nbhd), out);
    }

    pub fn probs_at_global(&self, i: usize, s: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.action_sizes[i]];
        self.probs_into(i, self.nbhd_index(i, s), &mut out);
        out
    }

    pub fn log_prob(&self, i: usize, s_nbhd: usize, a: usize) -> Result<f64> {
        self.check_row(i, s_nbhd)?;
        let l = self.logits(i, s_nbhd);
        let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + l.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        Ok(l[a] - lse)
    }

    /// `log pi(a | s) = sum_i log pi_i(a_i | s_{N_i})`.
    pub fn joint_log_prob(&self, s: &[usize], a: &[usize]) -> Result<f64> {
        (0..self.n()).map(|i| self.log_prob(i, self.nbhd_index(i, s), a[i])).sum()
    }

    pub fn score(&self, i: usize, s_nbhd: usize, a: usize) -> Result<Score> {
        let mut values = self.action_probabilities(i, s_nbhd)?;
        if a >= values.len() {
            return Err(Error::malformed("action", format!("{a} >= {}", values.len())));
        }
        values.iter_mut().for_each(|p| *p = -*p);
        values[a] += 1.0;
        Ok(Score { row: s_nbhd, values })
    }

    /// Score scattered into a full-size table for agent `i`.
    pub fn score_dense(&self, i: usize, s_nbhd: usize, a: usize) -> Result<Vec<f64>> {
        let sc = self.score(i, s_nbhd, a)?;
        let mut out = vec![0.0; self.theta[i].len()];
        let na = self.action_sizes[i];
        out[sc.row * na..(sc.row + 1) * na].copy_from_slice(&sc.values);
        Ok(out)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, i: usize, s_nbhd: usize, rng: &mut R) -> Result<usize> {
        Ok(sample_index(&self.action_probabilities(i, s_nbhd)?, rng))
    }

    /// Joint action drawn agent by agent in index order.
    pub fn sample_joint<R: Rng + ?Sized>(&self, s: &[usize], rng: &mut R) -> Vec<usize> {
        let mut a = vec![0; self.n()];
        self.sample_joint_into(s, rng, &mut a);
        a
    }

    pub(crate) fn sample_joint_into<R: Rng + ?Sized>(&self, s: &[usize], rng: &mut R, a: &mut [usize]) {
        let max_a = self.action_sizes.iter().copied().max().unwrap_or(1);
        let mut buf = smallvec::SmallVec::<[f64; 16]>::from_elem(0.0, max_a);
        for i in 0..self.n() {
            let p = &mut buf[..self.action_sizes[i]];
            self.probs_into(i, self.nbhd_index(i, s), p);
            a[i] = sample_index(p, rng);
        }
    }

    /// Coordinatewise clamp to `[-theta_bar, theta_bar]`.
    pub fn project_params(&self, mut theta: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let b = self.theta_bar;
        theta.iter_mut().flatten().for_each(|x| *x = x.clamp(-b, b));
        theta
    }

    /// `theta <- P(theta + eta * grad)`.
    pub fn ascent(&self, grads: &[Vec<f64>], eta: f64) -> Result<Self> {
        self.check_shape(grads)?;
        let b = self.theta_bar;
        let mut out = self.clone();
        for (t, g) in out.theta.iter_mut().zip(grads) {
            for (x, d) in t.iter_mut().zip(g) {
                *x = (*x + eta * d).clamp(-b, b);
            }
        }
        Ok(out)
    }

    /// Checkpoint: `#` header lines, then `agent,nbhd_state,action,value` rows.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# kappa={}", self.kappa)?;
        writeln!(w, "# theta_bar={}", self.theta_bar)?;
        writeln!(w, "# state_sizes={}", join(&self.state_sizes))?;
        writeln!(w, "# action_sizes={}", join(&self.action_sizes))?;
        writeln!(w, "agent,nbhd_state,action,value")?;
        for (i, t) in self.theta.iter().enumerate() {
            let na = self.action_sizes[i];
            for (k, v) in t.iter().enumerate() {
                writeln!(w, "{},{},{},{:?}", i, k / na, k % na, v)?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`write_checkpoint`](Self::write_checkpoint)
    /// for a policy with the same shape as `self`.
    pub fn read_checkpoint<R: BufRead>(&self, r: R) -> Result<Self> {
        let mut theta: Vec<Vec<f64>> = self.theta.iter().map(|t| vec![0.0; t.len()]).collect();
        let bad = |line: &str| Error::malformed("checkpoint", format!("bad row `{line}`"));
        for line in r.lines() {
            let line = line?;
            if line.starts_with('#') || line.starts_with("agent") || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(&line));
            }
            let i: usize = f[0].parse().map_err(|_| bad(&line))?;
            let row: usize = f[1].parse().map_err(|_| bad(&line))?;
            let a: usize = f[2].parse().map_err(|_| bad(&line))?;
            let v: f64 = f[3].parse().map_err(|_| bad(&line))?;
            let na = *self.action_sizes.get(i).ok_or_else(|| bad(&line))?;
            let slot = theta[i].get_mut(row * na + a).filter(|_| a < na).ok_or_else(|| bad(&line))?;
            *slot = v;
        }
        self.clone().with_theta(theta)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    fn two_action(kappa: usize, n: usize) -> KHopPolicy {
        let g = DependenceGraph::line(n).unwrap();
        KHopPolicy::uniform(&g, &vec![2; n], &vec![2; n], kappa, DEFAULT_THETA_BAR).unwrap()
    }

    fn single_row(logits: Vec<f64>) -> KHopPolicy {
        let g = DependenceGraph::line(1).unwrap();
        let p = KHopPolicy::uniform(&g, &[1], &[logits.len()], 0, DEFAULT_THETA_BAR).unwrap();
        p.with_theta(vec![logits]).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(single_row(vec![0.0, 0.0]).action_probabilities(0, 0).unwrap(), vec![0.5, 0.5]);
        let p = single_row(vec![3f64.ln(), 0.0]).action_probabilities(0, 0).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let p = single_row(vec![50.0, -50.0]).action_probabilities(0, 0).unwrap();
        assert!(p.iter().all(|x| x.is_finite() && *x > 0.0));
        assert!((p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_score() {
        let sc = single_row(vec![0.0, 0.0]).score(0, 0, 0).unwrap();
        assert_eq!(sc.values, vec![0.5, -0.5]);
        assert!((sc.norm() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn near_deterministic_score_vanishes() {
        let sc = single_row(vec![50.0, -50.0]).score(0, 0, 0).unwrap();
        assert!(sc.norm() < 1e-40);
    }

    #[test]
    fn projection_clamps() {
        let p = single_row(vec![0.0, 0.0, 0.0]);
        let out = p.project_params(vec![vec![1.5, 73.0, -73.0]]);
        assert_eq!(out, vec![vec![1.5, 50.0, -50.0]]);
    }

    #[test]
    fn out_of_range_rejected() {
        let p = two_action(1, 3);
        assert!(p.action_probabilities(0, 4).is_err());
        assert!(p.action_probabilities(3, 0).is_err());
        assert!(p.score(1, 0, 2).is_err());
    }

    #[test]
    fn table_guard() {
        let g = DependenceGraph::line(25).unwrap();
        let err = KHopPolicy::uniform(&g, &[8; 25], &[5; 25], 25, 50.0).unwrap_err();
        assert!(matches!(err, Error::TableTooLarge { .. }));
    }

    #[test]
    fn point_mass_sampling() {
        let p = single_row(vec![50.0, -50.0, -50.0]);
        let mut rng = stream(0, Purpose::Verify, 0, 0);
        // e^-100 probability mass on the others; never drawn in practice
        for _ in 0..1000 {
            assert_eq!(p.sample_action(0, 0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let p = single_row(vec![0.0; 3]);
        let mut rng = stream(1, Purpose::Verify, 0, 0);
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[p.sample_action(0, 0, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn fixed_seed_same_actions() {
        let p = two_action(1, 4);
        let draw = || {
            let mut rng = stream(9, Purpose::Verify, 0, 0);
            (0..100).map(|_| p.sample_joint(&[0, 1, 1, 0], &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = stream(2, Purpose::Verify, 0, 0);
        let p = two_action(1, 3);
        let theta = p.thetas().iter().map(|t| t.iter().map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let p = p.with_theta(theta).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        let back = two_action(1, 3).read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn induced_policy_freezes_outside_states() {
        let g = DependenceGraph::line(3).unwrap();
        let mut rng = stream(4, Purpose::Verify, 0, 0);
        let full = KHopPolicy::uniform(&g, &[2; 3], &[2; 3], 2, 50.0).unwrap();
        let theta = full.thetas().iter().map(|t| t.iter().map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let full = full.with_theta(theta).unwrap();
        let anchor = [1, 0, 1];
        let local = full.induced(&g, 0, &anchor).unwrap();
        for i in 0..3 {
            for si in 0..2 {
                let mut s = anchor.to_vec();
                s[i] = si;
                assert_eq!(local.probs_at_global(i, &s), full.probs_at_global(i, &s));
            }
        }
        assert_eq!(full.induced(&g, 2, &anchor).unwrap(), full);
    }

    fn random_policy(seed: u64, kappa: usize) -> KHopPolicy {
        let g = DependenceGraph::line(4).unwrap();
        let p = KHopPolicy::uniform(&g, &[2, 3, 2, 2], &[3, 2, 4, 2], kappa, 50.0).unwrap();
        let mut rng = stream(seed, Purpose::Verify, 0, 0);
        let theta = p.thetas().iter().map(|t| t.iter().map(|_| rng.gen_range(-60.0..60.0)).collect()).collect();
        p.with_theta(theta).unwrap()
    }

    proptest! {
        #[test]
        fn score_matches_log_prob_differences(seed in 0u64..1000, kappa in 0usize..3) {
            let p = random_policy(seed, kappa);
            let mut rng = stream(seed, Purpose::Verify, 1, 0);
            let i = rng.gen_range(0..4);
            let row = rng.gen_range(0..p.n_nbhd_states(i));
            let a = rng.gen_range(0..p.n_actions(i));
            // moderate logits so the finite difference is well conditioned
            let theta: Vec<Vec<f64>> = p.thetas().iter().map(|t| t.iter().map(|x| x / 20.0).collect()).collect();
            let p = p.with_theta(theta).unwrap();
            let sc = p.score_dense(i, row, a).unwrap();
            let h = 1e-5;
            let mut fd = vec![0.0; sc.len()];
            for k in 0..sc.len() {
                let bump = |d: f64| {
                    let mut th = p.thetas().to_vec();
                    th[i][k] += d;
                    p.clone().with_theta(th).unwrap().log_prob(i, row, a).unwrap()
                };
                fd[k] = (bump(h) - bump(-h)) / (2.0 * h);
            }
            let num: f64 = sc.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let den: f64 = sc.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            prop_assert!(num / den < 1e-6);
        }

        #[test]
        fn probabilities_are_distributions(seed in 0u64..1000, kappa in 0usize..3) {
            let p = random_policy(seed, kappa);
            for i in 0..4 {
                for row in 0..p.n_nbhd_states(i) {
                    let pr = p.action_probabilities(i, row).unwrap();
                    prop_assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(pr.iter().all(|&x| x > 0.0));
                    for a in 0..pr.len() {
                        let sc = p.score(i, row, a).unwrap();
                        prop_assert!(sc.norm() <= 2f64.sqrt());
                        let dense = p.score_dense(i, row, a).unwrap();
                        let na = p.n_actions(i);
                        prop_assert!(dense.iter().enumerate().all(|(k, &v)| k / na == row || v == 0.0));
                    }
                }
            }
        }

        #[test]
        fn joint_log_prob_factorizes(seed in 0u64..1000) {
            let p = random_policy(seed, 1);
            let mut rng = stream(seed, Purpose::Verify, 2, 0);
            let s = vec![rng.gen_range(0..2), rng.gen_range(0..3), rng.gen_range(0..2), rng.gen_range(0..2)];
            let a = p.sample_joint(&s, &mut rng);
            let joint = p.joint_log_prob(&s, &a).unwrap();
            let sum: f64 = (0..4).map(|i| p.log_prob(i, p.nbhd_index(i, &s), a[i]).unwrap()).sum();
            prop_assert_eq!(joint, sum);
        }
    }
}
