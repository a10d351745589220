//! Network topologies and the bulk-synchronous round driver shared by every
//! decentralized method.
//!
//! Node indices are 0-based everywhere in this crate. Edge-list files use
//! 1-based indices; [`parse_edge_list`] is the only place that converts.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resampling budget for [`gen_erdos_renyi`].
pub const MAX_ER_ATTEMPTS: usize = 1000;

/// An undirected, connected graph without self-loops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct Topology {
    m: usize,
    adjacency: Vec<bool>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    m: usize,
    /// 1-based pairs, matching the edge-list file format.
    edges: Vec<(usize, usize)>,
}

impl TryFrom<TopologyRepr> for Topology {
    type Error = Error;

    fn try_from(repr: TopologyRepr) -> Result<Self> {
        load_topology(&repr.edges, repr.m)
    }
}

impl From<Topology> for TopologyRepr {
    fn from(t: Topology) -> Self {
        TopologyRepr {
            m: t.m,
            edges: t.edges().into_iter().map(|(j, k)| (j + 1, k + 1)).collect(),
        }
    }
}

impl Topology {
    /// Builds a topology from 0-based undirected edges. Duplicate edges are
    /// accepted; self-loops and disconnected graphs are rejected.
    pub fn from_edges(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let t = Self::from_edges_unchecked(m, edges)?;
        if !is_connected(&t) {
            return Err(Error::Disconnected);
        }
        Ok(t)
    }

    fn from_edges_unchecked(
        m: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("topology needs at least one node"));
        }
        let mut adjacency = vec![false; m * m];
        for (j, k) in edges {
            if j >= m || k >= m {
                return Err(Error::NodeOutOfRange(j + 1, k + 1, m));
            }
            if j == k {
                return Err(Error::SelfLoop(j + 1));
            }
            adjacency[j * m + k] = true;
            adjacency[k * m + j] = true;
        }
        let neighbors = (0..m)
            .map(|j| (0..m).filter(|&k| adjacency[j * m + k]).collect())
            .collect();
        Ok(Topology {
            m,
            adjacency,
            neighbors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn is_edge(&self, j: usize, k: usize) -> bool {
        self.adjacency[j * self.m + k]
    }

    /// Sorted neighbor list of node `j`.
    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.neighbors[j]
    }

    pub fn degree(&self, j: usize) -> usize {
        self.neighbors[j].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    /// Undirected edges as 0-based pairs with `j < k`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.m)
            .flat_map(|j| {
                self.neighbors[j]
                    .iter()
                    .filter(move |&&k| k > j)
                    .map(move |&k| (j, k))
            })
            .collect()
    }

    /// Dense 0/1 adjacency matrix.
    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |j, k| {
            if self.is_edge(j, k) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Returns a copy with one extra node attached to every existing node.
    pub fn with_hub_node(&self) -> Topology {
        let hub = self.m;
        let edges = self.edges().into_iter().chain((0..self.m).map(|k| (hub, k)));
        Topology::from_edges_unchecked(self.m + 1, edges).expect("augmented graph is valid")
    }
}

/// Samples G(m, p_c), redrawing the whole graph until it is connected.
pub fn gen_erdos_renyi(m: usize, p_c: f64, seed: u64) -> Result<Topology> {
    gen_erdos_renyi_with_attempts(m, p_c, seed, MAX_ER_ATTEMPTS)
}

pub fn gen_erdos_renyi_with_attempts(
    m: usize,
    p_c: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<Topology> {
    if m < 2 {
        return Err(Error::invalid(format!("Erdos-Renyi graph needs m >= 2, got {m}")));
    }
    if !(p_c > 0.0 && p_c <= 1.0) {
        return Err(Error::invalid(format!("edge probability must lie in (0, 1], got {p_c}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_attempts {
        let mut edges = Vec::new();
        for j in 0..m {
            for k in (j + 1)..m {
                if rng.random::<f64>() < p_c {
                    edges.push((j, k));
                }
            }
        }
        let t = Topology::from_edges_unchecked(m, edges)?;
        if is_connected(&t) {
            return Ok(t);
        }
    }
    Err(Error::ConnectivityRetries {
        m,
        p_c,
        attempts: max_attempts,
    })
}

pub fn gen_complete(m: usize) -> Result<Topology> {
    if m < 2 {
        return Err(Error::invalid(format!("complete graph needs m >= 2, got {m}")));
    }
    let edges = (0..m).flat_map(|j| ((j + 1)..m).map(move |k| (j, k)));
    Topology::from_edges(m, edges)
}

/// Ring 0-1-...-(m-1)-0. Used by the small oracle instances.
pub fn gen_ring(m: usize) -> Result<Topology> {
    if m < 3 {
        return Err(Error::invalid(format!("ring needs m >= 3, got {m}")));
    }
    Topology::from_edges(m, (0..m).map(|j| (j, (j + 1) % m)))
}

/// Builds a topology from 1-based node pairs.
pub fn load_topology(edges: &[(usize, usize)], m: usize) -> Result<Topology> {
    let mut zero_based = Vec::with_capacity(edges.len());
    for &(j, k) in edges {
        if j == 0 || k == 0 || j > m || k > m {
            return Err(Error::NodeOutOfRange(j, k, m));
        }
        zero_based.push((j - 1, k - 1));
    }
    Topology::from_edges(m, zero_based)
}

/// Parses the edge-list text format: one `j k` pair per line, 1-based,
/// `#` starts a comment.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<(usize, usize)> = match fields.as_slice() {
            [a, b] => a.parse().ok().zip(b.parse().ok()),
            _ => None,
        };
        match parsed {
            Some(pair) => edges.push(pair),
            None => {
                return Err(Error::invalid(format!(
                    "edge list line {}: expected `j k`, got {raw:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(edges)
}

/// Reads an edge-list file. When `m` is `None` the node count is the largest
/// index mentioned.
pub fn read_edge_list(path: &Path, m: Option<usize>) -> Result<Topology> {
    let text = std::fs::read_to_string(path)?;
    let edges = parse_edge_list(&text).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let m = m.unwrap_or_else(|| edges.iter().map(|&(j, k)| j.max(k)).max().unwrap_or(0));
    load_topology(&edges, m)
}

/// Breadth-first reachability from node 0.
pub fn is_connected(t: &Topology) -> bool {
    let mut seen = vec![false; t.m];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(j) = queue.pop_front() {
        for &k in t.neighbors(j) {
            if !seen[k] {
                seen[k] = true;
                reached += 1;
                queue.push_back(k);
            }
        }
    }
    reached == t.m
}

/// Metropolis-Hastings mixing matrix: `1 / (1 + max(d_j, d_k))` on edges,
/// diagonal fills each row to one.
pub fn metropolis_weights(t: &Topology) -> DMatrix<f64> {
    let m = t.m;
    let mut w = DMatrix::zeros(m, m);
    for j in 0..m {
        for &k in t.neighbors(j) {
            w[(j, k)] = 1.0 / (1.0 + t.degree(j).max(t.degree(k)) as f64);
        }
    }
    for j in 0..m {
        let off: f64 = t.neighbors(j).iter().map(|&k| w[(j, k)]).sum();
        w[(j, j)] = 1.0 - off;
    }
    w
}

/// Runs `rounds` bulk-synchronous rounds. In every round each node computes
/// its next state from its own state and its neighbors' states as they were
/// at the end of the previous round.
pub fn run_rounds<S, F>(t: &Topology, states: Vec<S>, update: F, rounds: usize) -> Vec<S>
where
    F: Fn(usize, &S, &[(usize, &S)]) -> S,
{
    let order: Vec<usize> = (0..t.m).collect();
    run_rounds_ordered(t, states, update, rounds, &order)
}

/// [`run_rounds`] with an explicit node evaluation order. The result does not
/// depend on `order`; this exists so that property can be exercised.
pub fn run_rounds_ordered<S, F>(
    t: &Topology,
    mut states: Vec<S>,
    update: F,
    rounds: usize,
    order: &[usize],
) -> Vec<S>
where
    F: Fn(usize, &S, &[(usize, &S)]) -> S,
{
    assert_eq!(states.len(), t.m, "one state per node");
    assert_eq!(order.len(), t.m, "order must be a permutation of the nodes");
    for _ in 0..rounds {
        let mut next: Vec<Option<S>> = (0..t.m).map(|_| None).collect();
        for &j in order {
            let nbrs: Vec<(usize, &S)> = t.neighbors(j).iter().map(|&k| (k, &states[k])).collect();
            next[j] = Some(update(j, &states[j], &nbrs));
        }
        states = next
            .into_iter()
            .map(|s| s.expect("order covers every node"))
            .collect();
    }
    states
}
