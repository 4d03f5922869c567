//! Undirected network representation, the two simulation topologies, and
//! graph-distance queries.
//!
//! Peer averages throughout the crate use the row-normalized adjacency
//! `Ã_ij = A_ij / n_i`, with the average of an isolated node defined as 0.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Simple undirected graph without self-loops. Adjacency lists are sorted and
/// free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    edge_count: usize,
}

impl Graph {
    /// A graph on `n` nodes with no edges.
    pub fn empty(n: usize) -> Self {
        Graph {
            adjacency: vec![Vec::new(); n],
            edge_count: 0,
        }
    }

    /// Builds a graph from unordered pairs. Duplicates and reversed pairs are
    /// merged; a self-loop or an out-of-range endpoint is an error.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut adjacency = vec![Vec::new(); n];
        for (k, (a, b)) in edges.into_iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!(
                    "edge {k} ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::InvalidInput(format!(
                    "edge {k} is a self-loop on node {a}"
                )));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let mut twice = 0;
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
            twice += list.len();
        }
        Ok(Graph {
            adjacency,
            edge_count: twice / 2,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    /// Each unordered edge once, as `(low, high)`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn average_degree(&self) -> f64 {
        if self.adjacency.is_empty() {
            return 0.0;
        }
        2.0 * self.edge_count as f64 / self.adjacency.len() as f64
    }

    /// `n_i^{-1} Σ_{j ~ i} values_j`, or 0 for an isolated node.
    pub fn neighbor_share(&self, values: &[f64], i: usize) -> f64 {
        let list = &self.adjacency[i];
        if list.is_empty() {
            return 0.0;
        }
        list.iter().map(|&j| values[j]).sum::<f64>() / list.len() as f64
    }

    /// Applies the row-normalized adjacency to a vector, `Ã v`.
    pub fn neighbor_mean(&self, values: &[f64]) -> Vec<f64> {
        (0..self.node_count())
            .map(|i| self.neighbor_share(values, i))
            .collect()
    }

    /// Returns the graph relabelled so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.node_count()
            )));
        }
        Graph::from_edges(
            self.node_count(),
            self.edges().map(|(a, b)| (perm[a], perm[b])),
        )
    }
}

/// Ring lattice: node `i` is adjacent to `i - 1` and `i + 1` modulo `n`.
pub fn ring(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::InvalidSize(format!(
            "ring needs at least 3 nodes, got {n}"
        )));
    }
    Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
}

/// Connection radius `sqrt(kappa / (π n))` of the random geometric graph.
pub fn rgg_radius(n: usize, kappa: f64) -> f64 {
    (kappa / (std::f64::consts::PI * n as f64)).sqrt()
}

/// Random geometric graph on the unit square (no wrap-around): positions are
/// uniform and two nodes are joined when their Euclidean distance is at most
/// [`rgg_radius`].
pub fn rgg<R: Rng + ?Sized>(n: usize, kappa: f64, rng: &mut R) -> Result<Graph> {
    let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    rgg_from_positions(&positions, kappa)
}

/// Deterministic part of [`rgg`], given the node positions.
pub fn rgg_from_positions(positions: &[[f64; 2]], kappa: f64) -> Result<Graph> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::InvalidSize(format!(
            "rgg needs at least 2 nodes, got {n}"
        )));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidInput(format!(
            "rgg expected degree must be positive, got {kappa}"
        )));
    }
    let r = rgg_radius(n, kappa);
    let r2 = r * r;

    // Bucket positions into square cells of side >= r so only adjacent cells
    // need to be compared.
    let cells = ((1.0 / r).floor() as usize).clamp(1, 1 << 12);
    let cell_of = |p: f64| ((p * cells as f64) as usize).min(cells - 1);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
    for (i, p) in positions.iter().enumerate() {
        buckets[cell_of(p[0]) * cells + cell_of(p[1])].push(i);
    }

    let mut edges = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let (cx, cy) = (cell_of(p[0]), cell_of(p[1]));
        for nx in cx.saturating_sub(1)..=(cx + 1).min(cells - 1) {
            for ny in cy.saturating_sub(1)..=(cy + 1).min(cells - 1) {
                for &j in &buckets[nx * cells + ny] {
                    if j <= i {
                        continue;
                    }
                    let q = positions[j];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    if d2 <= r2 {
                        edges.push((i, j));
                    }
                }
            }
        }
    }
    Graph::from_edges(n, edges)
}

/// Exact-distance BFS layers `N∂(i, s)` for every node and `s <= radius`.
#[derive(Debug, Clone)]
pub struct DistanceIndex {
    radius: usize,
    // Per source: reachable nodes ordered by distance, and the start offset of
    // each layer (radius + 2 entries).
    order: Vec<Vec<usize>>,
    offsets: Vec<Vec<usize>>,
    truncated: bool,
}

impl DistanceIndex {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn node_count(&self) -> usize {
        self.order.len()
    }

    /// Whether every layer up to `lag` is available: either `lag` is
    /// within the radius or no search was cut short by it.
    pub fn covers(&self, lag: usize) -> bool {
        lag <= self.radius || !self.truncated
    }

    /// Nodes at path distance exactly `s` from `i`; empty beyond the radius.
    pub fn layer(&self, i: usize, s: usize) -> &[usize] {
        if s > self.radius {
            return &[];
        }
        let off = &self.offsets[i];
        &self.order[i][off[s]..off[s + 1]]
    }

    /// All nodes within distance `radius` of `i`, nearest first.
    pub fn ball(&self, i: usize) -> &[usize] {
        &self.order[i]
    }

    /// Average number of nodes at distance exactly `s`.
    pub fn mean_layer_size(&self, s: usize) -> f64 {
        let n = self.node_count();
        if n == 0 {
            return 0.0;
        }
        (0..n).map(|i| self.layer(i, s).len()).sum::<usize>() as f64 / n as f64
    }
}

/// Builds the BFS layers of every node up to `radius`. Unreachable nodes are
/// absent from all layers.
pub fn bfs_layers(g: &Graph, radius: usize) -> DistanceIndex {
    let n = g.node_count();
    let per_source: Vec<(Vec<usize>, Vec<usize>, bool)> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![usize::MAX; n],
            |dist, source| {
                let (order, offsets, cut) = bfs_from(g, source, radius, dist);
                for &v in &order {
                    dist[v] = usize::MAX;
                }
                (order, offsets, cut)
            },
        )
        .collect();
    let truncated = per_source.iter().any(|s| s.2);
    let (order, offsets) = per_source.into_iter().map(|(o, f, _)| (o, f)).unzip();
    DistanceIndex {
        radius,
        order,
        offsets,
        truncated,
    }
}

fn bfs_from(
    g: &Graph,
    source: usize,
    radius: usize,
    dist: &mut [usize],
) -> (Vec<usize>, Vec<usize>, bool) {
    let mut cut = false;
    let mut order = vec![source];
    let mut offsets = vec![0, 1];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u];
        if du == radius {
            cut |= g.neighbors(u).iter().any(|&v| dist[v] == usize::MAX);
            continue;
        }
        for &v in g.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = du + 1;
                order.push(v);
                queue.push_back(v);
            }
        }
    }
    // BFS visits nodes in non-decreasing distance, so layers are contiguous.
    let mut s = 1;
    for (k, &v) in order.iter().enumerate().skip(1) {
        while dist[v] > s {
            offsets.push(k);
            s += 1;
        }
    }
    while offsets.len() < radius + 2 {
        offsets.push(order.len());
    }
    (order, offsets, cut)
}

/// Single-pair path distance, `None` when unreachable.
pub fn distance(g: &Graph, a: usize, b: usize) -> Option<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    dist[a] = 0;
    let mut queue = VecDeque::from([a]);
    while let Some(u) = queue.pop_front() {
        if u == b {
            return Some(dist[u]);
        }
        for &v in g.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    None
}
