//! Built-in oracle and invariant checks on small instances.

use rand::Rng;

use crate::critic::{td_evaluate, TDConfig};
use crate::envs::{synthetic_line, SyntheticLineSpec};
use crate::error::Result;
use crate::graph::DependenceGraph;
use crate::model::{compute_decay_matrix, global_transition_matrix, FactoredCmdp};
use crate::occupancy::{estimate_local_occupancy, ExactSystem};
use crate::policy::KHopPolicy;
use crate::primal_dual::{
    exact_lagrangian_gradient, exact_truncated_pg, fd_lagrangian_gradient, flatten, fosp_metrics, AgentUtilities,
};
use crate::rng::{stream, Purpose};
use crate::rollout::sample_batch;
use crate::utility::{GeneralUtility, RewardSignal, ShadowReward};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn chain(n: usize, gamma: f64) -> Result<FactoredCmdp> {
    synthetic_line(&SyntheticLineSpec { n, gamma, ..Default::default() })
}

fn random_policy(m: &FactoredCmdp, kappa: usize, seed: u64, scale: f64) -> Result<KHopPolicy> {
    let p = KHopPolicy::for_model(m, kappa, 50.0)?;
    let mut rng = stream(seed, Purpose::Verify, 0, 0);
    let theta = p.thetas().iter().map(|t| t.iter().map(|_| rng.gen_range(-scale..scale)).collect()).collect();
    p.with_theta(theta)
}

fn entropy_utilities(n: usize, gamma: f64, c: f64) -> Vec<AgentUtilities> {
    (0..n)
        .map(|_| AgentUtilities {
            objective: GeneralUtility::env_reward(gamma),
            constraint: Some(GeneralUtility::entropy(gamma).with_threshold(c)),
        })
        .collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn column_sums() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let m = chain(3, 0.9)?;
        let p = random_policy(&m, 1, seed, 3.0)?;
        let pm = global_transition_matrix(&m, &p)?;
        for c in 0..pm.ncols() {
            worst = worst.max((pm.column(c).sum() - 1.0).abs());
        }
    }
    Ok((worst < 1e-10, format!("max |column sum - 1| = {worst:.2e}")))
}

fn flow_balance() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut mass_err = 0.0f64;
    for seed in 0..5 {
        let m = chain(3, 0.9)?;
        let p = random_policy(&m, 1, seed, 3.0)?;
        let sys = ExactSystem::new(&m, &p)?;
        let occ = sys.occupancy()?;
        worst = worst.max(sys.flow_balance_residual(occ));
        mass_err = mass_err.max((occ.mass() - 10.0).abs());
    }
    Ok((worst < 1e-8 && mass_err < 1e-8, format!("residual {worst:.2e}, mass error {mass_err:.2e}")))
}

fn empirical_occupancy() -> Result<(bool, String)> {
    let m = chain(2, 0.9)?;
    let p = KHopPolicy::for_model(&m, 1, 50.0)?;
    let sys = ExactSystem::new(&m, &p)?;
    let batch = sample_batch(&m, &p, 10_000, 100, 0, 0);
    let mut worst = 0.0f64;
    for i in 0..2 {
        let emp = estimate_local_occupancy(&batch, i, 2, 2, 0.9, 100)?;
        worst = worst.max(emp.l2_distance(&sys.local_occupancy(i)?));
    }
    Ok((worst < 0.05, format!("max l2 error {worst:.4}")))
}

fn shadow_rewards() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut rng = stream(1, Purpose::Verify, 0, 0);
    for _ in 0..100 {
        let t: Vec<f64> = (0..6).map(|_| rng.gen_range(0.05..2.0)).collect();
        let l = crate::occupancy::LocalOccupancy::new(0, 3, 2, t, crate::occupancy::MassConvention::ExactInfinite)?;
        for u in [GeneralUtility::entropy(0.9), GeneralUtility::l2(0.9)] {
            let a = u.shadow_reward(&l)?;
            let f = u.fd_gradient(&l, 1e-6)?;
            worst = worst.max(rel_l2(&f.table, &a.table));
        }
    }
    Ok((worst < 1e-5, format!("max relative error {worst:.2e}")))
}

fn score_bound() -> Result<(bool, String)> {
    let m = chain(4, 0.9)?;
    let p = random_policy(&m, 2, 3, 60.0)?;
    let mut worst = 0.0f64;
    for i in 0..p.n() {
        for row in 0..p.n_nbhd_states(i) {
            for a in 0..p.n_actions(i) {
                worst = worst.max(p.score(i, row, a)?.norm());
            }
        }
    }
    Ok((worst <= 2f64.sqrt(), format!("max score norm {worst:.6}")))
}

fn gradient_oracle() -> Result<(bool, String)> {
    let m = chain(2, 0.9)?;
    let u = entropy_utilities(2, 0.9, 0.3);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let p = random_policy(&m, 1, seed, 2.0)?;
        let mu = [0.5 + seed as f64 * 0.1, 1.0];
        let g = flatten(&exact_lagrangian_gradient(&m, &p, &u, &mu)?);
        let f = flatten(&fd_lagrangian_gradient(&m, &p, &u, &mu, 1e-5)?);
        worst = worst.max(rel_l2(&g, &f));
    }
    Ok((worst < 1e-4, format!("max relative error {worst:.2e}")))
}

fn truncation_decay() -> Result<(bool, String)> {
    let m = chain(4, 0.9)?;
    let p = random_policy(&m, 0, 4, 1.0)?;
    let u = entropy_utilities(4, 0.9, 0.3);
    let mu = [1.0; 4];
    let full = flatten(&exact_lagrangian_gradient(&m, &p, &u, &mu)?);
    let mut errs = Vec::new();
    for kappa in 0..=3 {
        let t = flatten(&exact_truncated_pg(&m, &p, &u, &mu, kappa, (&[0; 4], &[0; 4]))?);
        errs.push(full.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
    }
    let ok = errs.windows(2).all(|w| w[1] <= w[0]) && errs[3] < 1e-10;
    Ok((ok, format!("errors by kappa {:?}", errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>())))
}

fn decay_profile() -> Result<(bool, String)> {
    let d = compute_decay_matrix(&chain(5, 0.9)?, 3.0)?;
    let support = (0..5).all(|i| (0..5).all(|j| j == i || j == i + 1 || d.m[i][j] == 0.0));
    Ok((support && d.feasible, format!("omega {:.4}, phi0 {:.4}", d.omega, d.phi0)))
}

fn td_unit() -> Result<(bool, String)> {
    let m = FactoredCmdp::builder(DependenceGraph::line(1)?, vec![1], vec![1], 0.5)
        .kernel(0, vec![0], |_, _, out| out[0] = 1.0)
        .build()?;
    let p = KHopPolicy::for_model(&m, 0, 50.0)?;
    let r = RewardSignal::Local(ShadowReward { n_states: 1, n_actions: 1, table: vec![1.0] });
    let mut rng = stream(0, Purpose::Verify, 0, 0);
    let q = td_evaluate(&m, &p, &[r], 0, &TDConfig::default_for(0.5, 10_000), &mut rng)?;
    let v = q[0].get(&[0], &[0]);
    Ok(((v - 2.0).abs() < 0.05, format!("Q = {v:.4}")))
}

fn fosp() -> Result<(bool, String)> {
    let f = fosp_metrics(&[3.0, 4.0], &[0.1, 0.0], &[0.0, 0.0], &[0.0, 0.0], 50.0, 100.0);
    let z = fosp_metrics(&[0.0, 0.0], &[0.5], &[1.0, -2.0], &[0.0], 50.0, 100.0);
    Ok((f.x == 5.0 && f.y == 0.0 && z.e < 1e-12, format!("X = {}, E0 = {:.1e}", f.x, z.e)))
}

type CheckFn = fn() -> Result<(bool, String)>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("transition matrix columns sum to one", column_sums),
    ("exact occupancy flow balance and mass", flow_balance),
    ("empirical occupancy matches exact", empirical_occupancy),
    ("shadow rewards match finite differences", shadow_rewards),
    ("softmax score norm at most sqrt 2", score_bound),
    ("exact gradient matches finite differences", gradient_oracle),
    ("truncation error nonincreasing in kappa", truncation_decay),
    ("sensitivity matrix support on the chain", decay_profile),
    ("TD converges on the one-state model", td_unit),
    ("stationarity metrics on closed-form points", fosp),
];

/// Runs every check; a check that errors counts as failed.
pub fn run_all() -> Vec<Check> {
    CHECKS
        .iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => Check { name, passed, detail },
            Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
        })
        .collect()
}
