//! Dual updates, policy-gradient estimates, exact gradient oracles and the
//! first-order stationarity metrics.

use crate::critic::{global_reward, truncate_q, TruncatedQTable};
use crate::error::{Error, Result};
use crate::graph::DependenceGraph;
use crate::model::FactoredCmdp;
use crate::occupancy::ExactSystem;
use crate::policy::KHopPolicy;
use crate::rollout::Trajectory;
use crate::utility::{GeneralUtility, RewardSignal, UtilityKind};

pub const DEFAULT_MU_BAR: f64 = 100.0;

/// Objective and optional constraint of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentUtilities {
    pub objective: GeneralUtility,
    pub constraint: Option<GeneralUtility>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualVariable {
    pub mu: Vec<f64>,
    pub mu_bar: f64,
}

impl DualVariable {
    pub fn zeros(n: usize, mu_bar: f64) -> Self {
        Self { mu: vec![0.0; n], mu_bar }
    }
}

/// `mu_i = clamp(-eta_mu * g_i / n, 0, mu_bar)`. Memoryless by construction.
pub fn dual_update(g_tilde: &[f64], eta_mu: f64, mu_bar: f64, n: usize) -> Result<DualVariable> {
    if g_tilde.iter().any(|g| !g.is_finite()) {
        return Err(Error::NaN("constraint value"));
    }
    let mu = g_tilde.iter().map(|&g| (-eta_mu * g / n as f64).clamp(0.0, mu_bar)).collect();
    Ok(DualVariable { mu, mu_bar })
}

/// REINFORCE-style truncated gradient
/// `(1/B) sum_tau sum_k gamma^k score_i (1/n) sum_{j in N_i^kappa} [Qf_j + mu_j Qg_j]`.
#[allow(clippy::too_many_arguments)]
pub fn truncated_pg_estimate(
    batch: &[Trajectory],
    policy: &KHopPolicy,
    graph: &DependenceGraph,
    q_f: &[TruncatedQTable],
    q_g: &[Option<TruncatedQTable>],
    mu: &DualVariable,
    kappa: usize,
    gamma: f64,
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = policy.n();
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if q_f.len() != n || q_g.len() != n || mu.mu.len() != n || graph.n() != n {
        return Err(Error::ShapeMismatch(format!("expected {n} Q-tables and dual variables")));
    }
    for (index, t) in batch.iter().enumerate() {
        if t.len() != horizon {
            return Err(Error::RaggedBatch { index, len: t.len(), expected: horizon });
        }
        if t.n() != n {
            return Err(Error::malformed("batch", format!("trajectory {index} covers {} agents, expected {n}", t.n())));
        }
    }
    let nbhds: Vec<Vec<usize>> = (0..n).map(|i| graph.khop_neighborhood(i, kappa)).collect::<Result<_>>()?;
    let mut grads: Vec<Vec<f64>> = policy.thetas().iter().map(|t| vec![0.0; t.len()]).collect();
    let w = 1.0 / batch.len() as f64;
    let mut qsum = vec![0.0; n];
    let mut probs = vec![0.0; policy.action_sizes().iter().copied().max().unwrap_or(1)];
    for t in batch {
        let mut disc = w;
        for k in 0..horizon {
            let (s, a) = (t.state(k), t.action(k));
            for j in 0..n {
                let mut v = q_f[j].get(s, a);
                if let Some(g) = &q_g[j] {
                    v += mu.mu[j] * g.get(s, a);
                }
                qsum[j] = v;
            }
            for i in 0..n {
                let weight: f64 = nbhds[i].iter().map(|&j| qsum[j]).sum::<f64>() / n as f64;
                if weight == 0.0 {
                    continue;
                }
                let row = policy.nbhd_index(i, s);
                let na = policy.n_actions(i);
                let p = &mut probs[..na];
                policy.probs_into(i, row, p);
                let g = &mut grads[i][row * na..(row + 1) * na];
                let c = disc * weight;
                for b in 0..na {
                    let score = if b == a[i] { 1.0 - p[b] } else { -p[b] };
                    g[b] += c * score;
                }
            }
            disc *= gamma;
        }
    }
    Ok(grads)
}

/// Exact value of a utility under the system's policy.
pub fn exact_utility_value(sys: &ExactSystem<'_>, agent: usize, u: &GeneralUtility) -> Result<f64> {
    match u.kind {
        UtilityKind::EnvReward => {
            let occ = sys.occupancy()?;
            let raw: f64 = sys.env_reward(agent).iter().zip(&occ.table).map(|(r, l)| r * l).sum();
            Ok(raw - u.threshold.unwrap_or(0.0))
        }
        _ => u.value(&sys.local_occupancy(agent)?),
    }
}

/// Exact `(F_i, G_i)` per agent; `G_i = 0` without a constraint.
pub fn exact_values(sys: &ExactSystem<'_>, utilities: &[AgentUtilities]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut f = Vec::with_capacity(utilities.len());
    let mut g = Vec::with_capacity(utilities.len());
    for (i, u) in utilities.iter().enumerate() {
        f.push(exact_utility_value(sys, i, &u.objective)?);
        g.push(match &u.constraint {
            Some(c) => exact_utility_value(sys, i, c)?,
            None => 0.0,
        });
    }
    Ok((f, g))
}

/// `L = (1/n) sum_i (F_i + mu_i G_i)`.
pub fn lagrangian_value(sys: &ExactSystem<'_>, utilities: &[AgentUtilities], mu: &[f64]) -> Result<f64> {
    let (f, g) = exact_values(sys, utilities)?;
    let n = f.len() as f64;
    Ok(f.iter().zip(&g).zip(mu).map(|((f, g), m)| f + m * g).sum::<f64>() / n)
}

/// Global shadow reward `r_f_j + mu_j r_g_j` of every agent at the exact occupancy.
fn combined_rewards(sys: &ExactSystem<'_>, utilities: &[AgentUtilities], mu: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = sys.cmdp().n();
    if utilities.len() != n || mu.len() != n {
        return Err(Error::ShapeMismatch(format!("expected utilities and duals for {n} agents")));
    }
    let signal = |j: usize, u: &GeneralUtility| -> Result<RewardSignal> {
        match u.kind {
            UtilityKind::EnvReward => Ok(RewardSignal::Env),
            _ => u.signal(&sys.local_occupancy(j)?),
        }
    };
    (0..n)
        .map(|j| {
            let mut r = global_reward(sys, j, &signal(j, &utilities[j].objective)?);
            if let Some(c) = &utilities[j].constraint {
                let rg = global_reward(sys, j, &signal(j, c)?);
                r.iter_mut().zip(&rg).for_each(|(x, y)| *x += mu[j] * y);
            }
            Ok(r)
        })
        .collect()
}

/// `sum_{(s,a)} lambda(s,a) score_i(s,a) w_i(s,a)` for per-agent weights.
fn occupancy_weighted_scores(
    sys: &ExactSystem<'_>,
    policy: &KHopPolicy,
    weight: impl Fn(usize, usize) -> f64,
) -> Result<Vec<Vec<f64>>> {
    let occ = sys.occupancy()?;
    let space = sys.space();
    let n = policy.n();
    let mut grads: Vec<Vec<f64>> = policy.thetas().iter().map(|t| vec![0.0; t.len()]).collect();
    let probs: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| (0..policy.n_nbhd_states(i)).map(|r| policy.action_probabilities(i, r)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    for (pair, &lam) in occ.table.iter().enumerate() {
        if lam == 0.0 {
            continue;
        }
        let (si, ai) = space.split(pair);
        let (s, a) = (&space.state_tuples[si], &space.action_tuples[ai]);
        for i in 0..n {
            let w = weight(i, pair);
            if w == 0.0 {
                continue;
            }
            let row = policy.nbhd_index(i, s);
            let na = policy.n_actions(i);
            let p = &probs[i][row];
            let g = &mut grads[i][row * na..(row + 1) * na];
            for b in 0..na {
                let score = if b == a[i] { 1.0 - p[b] } else { -p[b] };
                g[b] += lam * w * score;
            }
        }
    }
    Ok(grads)
}

/// `grad_theta_i L = sum lambda(s,a) score_i(s,a) (1/n) sum_j (Qf_j + mu_j Qg_j)(s,a)`
/// with shadow rewards at the exact local occupancies.
pub fn exact_lagrangian_gradient(
    cmdp: &FactoredCmdp,
    policy: &KHopPolicy,
    utilities: &[AgentUtilities],
    mu: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let sys = ExactSystem::new(cmdp, policy)?;
    exact_lagrangian_gradient_in(&sys, policy, utilities, mu)
}

pub fn exact_lagrangian_gradient_in(
    sys: &ExactSystem<'_>,
    policy: &KHopPolicy,
    utilities: &[AgentUtilities],
    mu: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = policy.n();
    let rewards = combined_rewards(sys, utilities, mu)?;
    let mut total = vec![0.0; sys.space().n_pairs()];
    for r in &rewards {
        total.iter_mut().zip(r).for_each(|(t, x)| *t += x / n as f64);
    }
    let q = sys.q_values(&total)?;
    occupancy_weighted_scores(sys, policy, |_, pair| q[pair])
}

/// Exact truncated gradient: as [`exact_lagrangian_gradient`] but agent `i`
/// sums only over `j in N_i^kappa`, using `Q_j` truncated to `N_j^kappa` at `anchor`.
pub fn exact_truncated_pg(
    cmdp: &FactoredCmdp,
    policy: &KHopPolicy,
    utilities: &[AgentUtilities],
    mu: &[f64],
    kappa: usize,
    anchor: (&[usize], &[usize]),
) -> Result<Vec<Vec<f64>>> {
    let sys = ExactSystem::new(cmdp, policy)?;
    let n = cmdp.n();
    let rewards = combined_rewards(&sys, utilities, mu)?;
    let space = sys.space();
    let mut qhat = Vec::with_capacity(n);
    for (j, r) in rewards.iter().enumerate() {
        let t = truncate_q(cmdp, &sys.q_values(r)?, j, kappa, anchor)?;
        qhat.push(
            (0..space.n_pairs())
                .map(|pair| {
                    let (si, ai) = space.split(pair);
                    t.get(&space.state_tuples[si], &space.action_tuples[ai])
                })
                .collect::<Vec<f64>>(),
        );
    }
    let nbhds: Vec<Vec<usize>> = (0..n).map(|i| cmdp.graph().khop_neighborhood(i, kappa)).collect::<Result<_>>()?;
    occupancy_weighted_scores(&sys, policy, |i, pair| {
        nbhds[i].iter().map(|&j| qhat[j][pair]).sum::<f64>() / n as f64
    })
}

/// Central differences of `L(theta, mu)` over every parameter.
pub fn fd_lagrangian_gradient(
    cmdp: &FactoredCmdp,
    policy: &KHopPolicy,
    utilities: &[AgentUtilities],
    mu: &[f64],
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = policy.thetas().iter().map(|t| vec![0.0; t.len()]).collect();
    // raw tables so the probe is not clamped at the box
    let base = policy.thetas().to_vec();
    let eval = |theta: Vec<Vec<f64>>| -> Result<f64> {
        let bar = theta.iter().flatten().fold(policy.theta_bar(), |m, x| m.max(x.abs()));
        let probe = KHopPolicy::uniform(cmdp.graph(), cmdp.state_sizes(), cmdp.action_sizes(), policy.kappa(), bar)?
            .with_theta(theta)?;
        lagrangian_value(&ExactSystem::new(cmdp, &probe)?, utilities, mu)
    };
    for i in 0..base.len() {
        for k in 0..base[i].len() {
            let mut up = base.clone();
            up[i][k] += h;
            let mut down = base.clone();
            down[i][k] -= h;
            out[i][k] = (eval(up)? - eval(down)?) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Primal and dual stationarity measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fosp {
    pub x: f64,
    pub y: f64,
    pub e: f64,
}

const NU_TOL: f64 = 1e-10;

/// `max <g, d>` over `{d : lo <= d <= hi, ||d|| <= 1}` with `lo <= 0 <= hi`.
pub fn max_linear_box_ball(g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let inside = g.iter().zip(lo.iter().zip(hi)).all(|(&gi, (&l, &u))| {
        let d = gi / norm;
        l <= d && d <= u
    });
    if inside {
        return norm;
    }
    let clamped = |nu: f64| -> Vec<f64> {
        g.iter().zip(lo.iter().zip(hi)).map(|(&gi, (&l, &u))| (gi / nu).clamp(l, u)).collect()
    };
    let dot = |d: &[f64]| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    let l2 = |d: &[f64]| d.iter().map(|x| x * x).sum::<f64>().sqrt();
    let vertex: Vec<f64> = g
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&gi, (&l, &u))| if gi > 0.0 { u } else if gi < 0.0 { l } else { 0.0 })
        .collect();
    if l2(&vertex) <= 1.0 {
        return dot(&vertex);
    }
    // ||clamp(g/nu)|| is nonincreasing in nu and at most 1 at nu = ||g||
    let (mut a, mut b) = (0.0, norm);
    while b - a > NU_TOL * norm.max(1.0) {
        let mid = 0.5 * (a + b);
        if l2(&clamped(mid)) > 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    dot(&clamped(b))
}

/// `X`, `Y` and `E = X^2 + Y^2` for gradients `grad_theta` and `grad_mu` of `L`
/// at `(theta, mu)` with boxes `[-theta_bar, theta_bar]` and `[0, mu_bar]`.
pub fn fosp_metrics(grad_theta: &[f64], grad_mu: &[f64], theta: &[f64], mu: &[f64], theta_bar: f64, mu_bar: f64) -> Fosp {
    let lo: Vec<f64> = theta.iter().map(|t| -theta_bar - t).collect();
    let hi: Vec<f64> = theta.iter().map(|t| theta_bar - t).collect();
    let x = max_linear_box_ball(grad_theta, &lo, &hi);
    let neg: Vec<f64> = grad_mu.iter().map(|g| -g).collect();
    let lo: Vec<f64> = mu.iter().map(|m| -m).collect();
    let hi: Vec<f64> = mu.iter().map(|m| mu_bar - m).collect();
    let y = max_linear_box_ball(&neg, &lo, &hi);
    Fosp { x, y, e: x * x + y * y }
}

pub fn flatten(v: &[Vec<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}
