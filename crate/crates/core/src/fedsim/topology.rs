use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Star,
    Cycle,
    BinaryTree,
    RandomGraph,
    Complete,
}

/// Resampling cap for random graphs that come out disconnected.
const MAX_GRAPH_ATTEMPTS: usize = 10_000;

/// Undirected communication graph over `K` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    kind: TopologyKind,
    adjacency: Vec<Vec<bool>>,
    edge_probability: Option<f64>,
}

impl Topology {
    /// Builds a graph from an adjacency matrix, checking symmetry, the
    /// diagonal and connectivity.
    pub fn from_adjacency(kind: TopologyKind, adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let k = adjacency.len();
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Topology(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if row[i] {
                return Err(Error::Topology(format!("self loop at node {i}")));
            }
            for j in 0..k {
                if row[j] != adjacency[j][i] {
                    return Err(Error::Topology(format!("edge ({i}, {j}) is not symmetric")));
                }
            }
        }
        let t = Topology {
            kind,
            adjacency,
            edge_probability: None,
        };
        if !t.is_connected() {
            return Err(Error::Topology(format!("{kind:?} graph on {k} nodes is disconnected")));
        }
        Ok(t)
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_probability(&self) -> Option<f64> {
        self.edge_probability
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i].iter().enumerate().filter(|(_, &e)| e).map(|(j, _)| j)
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(|r| r.iter().filter(|&&e| e).count()).collect()
    }

    /// Breadth-first search from node 0.
    pub fn is_connected(&self) -> bool {
        let k = self.num_nodes();
        if k == 0 {
            return false;
        }
        let mut seen = vec![false; k];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Metropolis weights `P_ij = 1 / (1 + max(deg_i, deg_j))` on edges,
    /// with the remaining mass on the diagonal.
    pub fn metropolis(&self) -> Vec<Vec<f64>> {
        let k = self.num_nodes();
        let deg = self.degrees();
        let mut p = vec![vec![0.0; k]; k];
        for i in 0..k {
            let mut off = 0.0;
            for j in self.neighbors(i) {
                let w = 1.0 / (1 + deg[i].max(deg[j])) as f64;
                p[i][j] = w;
                off += w;
            }
            p[i][i] = 1.0 - off;
        }
        p
    }
}

fn empty(k: usize) -> Vec<Vec<bool>> {
    vec![vec![false; k]; k]
}

fn link(a: &mut [Vec<bool>], i: usize, j: usize) {
    a[i][j] = true;
    a[j][i] = true;
}

/// Builds one of the standard graphs. `edge_probability` is only read for
/// random graphs, which are resampled from a seeded stream until connected.
pub fn build_topology(kind: TopologyKind, k: usize, edge_probability: f64, seed: u64) -> Result<Topology> {
    if k < 2 {
        return Err(Error::Topology(format!("need at least 2 nodes, got {k}")));
    }
    let mut a = empty(k);
    match kind {
        TopologyKind::Star => (1..k).for_each(|j| link(&mut a, 0, j)),
        TopologyKind::Cycle => (0..k).for_each(|i| link(&mut a, i, (i + 1) % k)),
        TopologyKind::BinaryTree => (1..k).for_each(|j| link(&mut a, (j - 1) / 2, j)),
        TopologyKind::Complete => {
            for i in 0..k {
                for j in i + 1..k {
                    link(&mut a, i, j);
                }
            }
        }
        TopologyKind::RandomGraph => {
            if !(edge_probability > 0.0 && edge_probability <= 1.0) {
                return Err(Error::Topology(format!("edge probability {edge_probability} must be in (0, 1]")));
            }
            let mut rng = stream_rng(seed, &[stream::TOPOLOGY]);
            for _ in 0..MAX_GRAPH_ATTEMPTS {
                let mut g = empty(k);
                for i in 0..k {
                    for j in i + 1..k {
                        if rng.random::<f64>() < edge_probability {
                            link(&mut g, i, j);
                        }
                    }
                }
                if let Ok(mut t) = Topology::from_adjacency(kind, g) {
                    t.edge_probability = Some(edge_probability);
                    return Ok(t);
                }
            }
            return Err(Error::Topology(format!(
                "no connected graph with p = {edge_probability} on {k} nodes after {MAX_GRAPH_ATTEMPTS} draws"
            )));
        }
    }
    Topology::from_adjacency(kind, a)
}
