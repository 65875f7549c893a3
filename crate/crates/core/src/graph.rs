//! Agent dependence graph and κ-hop neighborhoods.

use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};

/// Undirected graph over agents `0..n` with all-pairs hop distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceGraph {
    n: usize,
    adjacency: Vec<Vec<usize>>,
    dist: Vec<Vec<usize>>,
}

/// Distance reported between agents in different connected components.
pub const UNREACHABLE: usize = usize::MAX;

impl DependenceGraph {
    /// Builds a graph from an edge list. Duplicate edges are merged; self
    /// loops and out-of-range endpoints are rejected.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one agent".into()));
        }
        let mut sets = vec![BTreeSet::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self loop at {u}")));
            }
            sets[u].insert(v);
            sets[v].insert(u);
        }
        let adjacency: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let dist = (0..n).map(|src| bfs(&adjacency, src)).collect();
        Ok(Self { n, adjacency, dist })
    }

    /// Path graph `0 - 1 - ... - n-1`.
    pub fn line(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    /// Hop distance, or [`UNREACHABLE`].
    pub fn distance(&self, i: usize, j: usize) -> usize {
        self.dist[i][j]
    }

    /// Largest finite distance between two agents.
    pub fn diameter(&self) -> usize {
        self.dist
            .iter()
            .flatten()
            .copied()
            .filter(|&d| d != UNREACHABLE)
            .max()
            .unwrap_or(0)
    }

    /// Agents within `kappa` hops of `i`, ascending.
    pub fn khop_neighborhood(&self, i: usize, kappa: usize) -> Result<Vec<usize>> {
        if i >= self.n {
            return Err(Error::AgentOutOfRange { agent: i, n: self.n });
        }
        Ok((0..self.n).filter(|&j| self.dist[i][j] <= kappa).collect())
    }
}

fn bfs(adjacency: &[Vec<usize>], src: usize) -> Vec<usize> {
    let mut dist = vec![UNREACHABLE; adjacency.len()];
    dist[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if dist[v] == UNREACHABLE {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}
