//! Benchmark environments: the synthetic line and the wireless access grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DependenceGraph;
use crate::model::FactoredCmdp;
use crate::rng::{stream, Purpose};

/// Agents on a line; agent `i` can only turn on when agent `i+1` is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLineSpec {
    pub n: usize,
    pub gamma: f64,
    /// Reward of agent 0 in state 1.
    #[serde(default = "default_head")]
    pub reward_head: f64,
    /// Reward of every other agent in state 1.
    #[serde(default = "default_rest")]
    pub reward_rest: f64,
}

fn default_head() -> f64 {
    1.0
}

fn default_rest() -> f64 {
    0.1
}

impl Default for SyntheticLineSpec {
    fn default() -> Self {
        Self { n: 10, gamma: 0.99, reward_head: 1.0, reward_rest: 0.1 }
    }
}

/// Probability that a middle agent acting 1 turns on while its successor is off.
pub const MIDDLE_ON_PROB: f64 = 0.8;

/// Binary states and actions, zero-indexed:
/// - agent 0: `s_0' = 1` iff `s_1 = 1`
/// - agent `n-1`: `s' = 1` iff `a = 1`
/// - others: `P(s_i' = 1)` is 1 if `a_i = 1, s_{i+1} = 1`, 0.8 if `a_i = 1, s_{i+1} = 0`, else 0.
pub fn synthetic_line(spec: &SyntheticLineSpec) -> Result<FactoredCmdp> {
    let n = spec.n;
    if n < 2 {
        return Err(Error::config("env.n", "synthetic line needs at least 2 agents"));
    }
    if !spec.reward_head.is_finite() || !spec.reward_rest.is_finite() {
        return Err(Error::config("env.reward_head", "rewards must be finite"));
    }
    let on = |out: &mut [f64], p: f64| {
        out[1] = p;
        out[0] = 1.0 - p;
    };
    let mut b = FactoredCmdp::builder(DependenceGraph::line(n)?, vec![2; n], vec![2; n], spec.gamma)
        .kernel(0, vec![1], move |s, _, out| on(out, if s[0] == 1 { 1.0 } else { 0.0 }))
        .kernel(n - 1, vec![n - 1], move |_, a, out| on(out, if a[0] == 1 { 1.0 } else { 0.0 }));
    for i in 1..n - 1 {
        b = b.kernel(i, vec![i, i + 1], move |s, a, out| {
            let p = match (a[0], s[1]) {
                (1, 1) => 1.0,
                (1, _) => MIDDLE_ON_PROB,
                _ => 0.0,
            };
            on(out, p)
        });
    }
    for i in 0..n {
        let r = if i == 0 { spec.reward_head } else { spec.reward_rest };
        b = b.reward(i, vec![i], move |s, _| if s[0] == 1 { r } else { 0.0 });
    }
    b.build().map_err(|e| match e {
        Error::InvalidModel(m) if m.contains("gamma") => Error::config("gamma", m),
        e => e,
    })
}

/// `side x side` users and `(side-1)^2` access points on the cell corners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirelessGridSpec {
    pub side: usize,
    pub gamma: f64,
    #[serde(default = "default_deadline")]
    pub deadline: usize,
    /// Arrival probability per user; drawn from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival: Option<Vec<f64>>,
    /// Success probability per access point; drawn from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_deadline() -> usize {
    3
}

impl Default for WirelessGridSpec {
    fn default() -> Self {
        Self { side: 5, gamma: 0.99, deadline: 3, arrival: None, success: None, seed: 0 }
    }
}

pub const PROB_RANGE: (f64, f64) = (0.3, 0.9);

/// Layout of a wireless grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WirelessLayout {
    pub side: usize,
    /// Access points of each user in ascending order; action `k >= 1` picks `aps[i][k-1]`.
    pub aps: Vec<Vec<usize>>,
    pub arrival: Vec<f64>,
    pub success: Vec<f64>,
    pub deadline: usize,
}

impl WirelessLayout {
    pub fn new(spec: &WirelessGridSpec) -> Result<Self> {
        if spec.side < 2 {
            return Err(Error::config("env.side", "must be at least 2"));
        }
        if spec.deadline == 0 || spec.deadline > 16 {
            return Err(Error::config("env.deadline", "must be in 1..=16"));
        }
        let side = spec.side;
        let (n_users, n_aps) = (side * side, (side - 1) * (side - 1));
        let mut rng = stream(spec.seed, Purpose::Env, 0, 0);
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.gen_range(PROB_RANGE.0..PROB_RANGE.1)).collect() };
        let arrival_drawn = draw(n_users);
        let success_drawn = draw(n_aps);
        let arrival = spec.arrival.clone().unwrap_or(arrival_drawn);
        let success = spec.success.clone().unwrap_or(success_drawn);
        let check = |field: &str, v: &[f64], len: usize| -> Result<()> {
            if v.len() != len {
                return Err(Error::config(field, format!("expected {len} probabilities, got {}", v.len())));
            }
            if v.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
                return Err(Error::config(field, "probabilities must lie in (0,1)"));
            }
            Ok(())
        };
        check("env.arrival", &arrival, n_users)?;
        check("env.success", &success, n_aps)?;
        let aps = (0..n_users)
            .map(|u| {
                let (r, c) = (u / side, u % side);
                let mut v = Vec::new();
                for a in [r.wrapping_sub(1), r] {
                    for b in [c.wrapping_sub(1), c] {
                        if a < side - 1 && b < side - 1 {
                            v.push(a * (side - 1) + b);
                        }
                    }
                }
                v.sort_unstable();
                v
            })
            .collect();
        Ok(Self { side, aps, arrival, success, deadline: spec.deadline })
    }

    pub fn n_users(&self) -> usize {
        self.side * self.side
    }

    pub fn n_aps(&self) -> usize {
        (self.side - 1) * (self.side - 1)
    }

    /// Access point addressed by `action` of user `i`, if any.
    pub fn target(&self, i: usize, action: usize) -> Option<usize> {
        action.checked_sub(1).map(|k| self.aps[i][k])
    }

    /// Users sharing at least one access point.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_users();
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.aps[i].iter().any(|y| self.aps[j].contains(y)) {
                    e.push((i, j));
                }
            }
        }
        e
    }
}

/// Queue after one step without the arrival: the earliest-deadline packet
/// leaves if the user transmits, then every deadline drops by one and a
/// packet at deadline 1 expires.
pub fn queue_after_service(queue: usize, transmits: bool) -> usize {
    let q = if transmits && queue != 0 { queue & (queue - 1) } else { queue };
    q >> 1
}

/// Users transmit deadline queues to shared access points. State bit `k-1`
/// set means a packet with `k` steps left; action 0 is idle and action `k`
/// sends the earliest packet to the `k`-th access point of the user. The
/// reward of user `i` is the expected success `q_y` when `i` holds a packet,
/// sends it to `y`, and no other user with a packet sends to `y`.
pub fn wireless_grid(spec: &WirelessGridSpec) -> Result<FactoredCmdp> {
    let layout = WirelessLayout::new(spec)?;
    wireless_from_layout(&layout, spec.gamma)
}

pub fn wireless_from_layout(layout: &WirelessLayout, gamma: f64) -> Result<FactoredCmdp> {
    let n = layout.n_users();
    let graph = DependenceGraph::new(n, &layout.edges())?;
    let d = layout.deadline;
    let state_sizes = vec![1usize << d; n];
    let action_sizes: Vec<usize> = layout.aps.iter().map(|a| a.len() + 1).collect();
    let mut b = FactoredCmdp::builder(graph.clone(), state_sizes, action_sizes, gamma);
    for i in 0..n {
        let p = layout.arrival[i];
        let top = 1usize << (d - 1);
        b = b.kernel(i, vec![i], move |s, a, out| {
            let q = queue_after_service(s[0], a[0] != 0);
            out[q] += 1.0 - p;
            out[q | top] += p;
        });
        let mut deps: Vec<usize> = graph.neighbors(i).to_vec();
        deps.push(i);
        deps.sort_unstable();
        let me = deps.iter().position(|&j| j == i).unwrap_or(0);
        let targets: Vec<Vec<usize>> = deps.iter().map(|&j| layout.aps[j].clone()).collect();
        let success = layout.success.clone();
        b = b.reward(i, deps, move |s, a| {
            if s[me] == 0 || a[me] == 0 {
                return 0.0;
            }
            let y = targets[me][a[me] - 1];
            let collided = (0..s.len()).any(|k| k != me && s[k] != 0 && a[k] != 0 && targets[k][a[k] - 1] == y);
            if collided {
                0.0
            } else {
                success[y]
            }
        });
    }
    b.build().map_err(|e| match e {
        Error::InvalidModel(m) if m.contains("gamma") => Error::config("gamma", m),
        e => e,
    })
}
