//! Hypergraph topology: validated edge lists, incidence/degree structure,
//! clique expansion and a seeded synthetic generator.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Static hypergraph `G = (V, E, Ω)` with dense node ids `0..n`.
///
/// Each hyperedge is stored as a sorted list of distinct node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    n: usize,
    edges: Vec<Vec<usize>>,
    edge_weights: Vec<f64>,
}

impl Hypergraph {
    /// Builds a hypergraph with unit edge weights.
    pub fn new(n: usize, edges: Vec<Vec<usize>>) -> Result<Self> {
        let m = edges.len();
        Self::with_weights(n, edges, vec![1.0; m])
    }

    pub fn with_weights(n: usize, edges: Vec<Vec<usize>>, edge_weights: Vec<f64>) -> Result<Self> {
        if edge_weights.len() != edges.len() {
            return Err(Error::Validation(format!(
                "{} edge weights for {} hyperedges",
                edge_weights.len(),
                edges.len()
            )));
        }
        let mut sorted = Vec::with_capacity(edges.len());
        for (e, edge) in edges.into_iter().enumerate() {
            if edge.is_empty() {
                return Err(Error::Validation(format!("hyperedge {e} is empty")));
            }
            let mut edge = edge;
            edge.sort_unstable();
            if let Some(w) = edge.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::Validation(format!(
                    "hyperedge {e} lists node {} more than once",
                    w[0]
                )));
            }
            if let Some(&v) = edge.last().filter(|&&v| v >= n) {
                return Err(Error::Validation(format!(
                    "hyperedge {e} references node {v} but n = {n}"
                )));
            }
            sorted.push(edge);
        }
        if let Some((e, w)) = edge_weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::Validation(format!(
                "hyperedge {e} has non-positive or non-finite weight {w}"
            )));
        }
        Ok(Self {
            n,
            edges: sorted,
            edge_weights,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &[usize] {
        &self.edges[e]
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    /// Renders the text format accepted by [`parse_hypergraph`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# hypergraph n={} m={}\n", self.n, self.edges.len()));
        for edge in &self.edges {
            let line: Vec<String> = edge.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Parses one hyperedge per line; `#` starts a comment line. `n` is one more
/// than the largest node id seen.
pub fn parse_hypergraph(text: &str) -> Result<Hypergraph> {
    let mut edges = Vec::new();
    let mut max_id: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        let mut edge = Vec::new();
        for tok in trimmed.split_whitespace() {
            let v: usize = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid node id {tok:?}"),
            })?;
            edge.push(v);
        }
        if edge.is_empty() {
            // A blank trailing line is not an edge; a blank line in the middle is.
            if trimmed.is_empty() && text.lines().skip(idx).all(|l| l.trim().is_empty()) {
                break;
            }
            return Err(Error::Validation(format!("line {line_no}: empty hyperedge")));
        }
        let mut seen = BTreeSet::new();
        for &v in &edge {
            if !seen.insert(v) {
                return Err(Error::Validation(format!(
                    "line {line_no}: node {v} repeated within a hyperedge"
                )));
            }
        }
        max_id = max_id.max(edge.iter().copied().max());
        edges.push(edge);
    }
    let n = max_id.map_or(0, |m| m + 1);
    Hypergraph::new(n, edges)
}

pub fn load_hypergraph(path: impl AsRef<Path>) -> Result<Hypergraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hypergraph(&text)
}

/// Incidence matrix `H` kept in both orientations, with node and hyperedge degrees.
#[derive(Debug, Clone)]
pub struct IncidenceSystem {
    n: usize,
    node_edges: Vec<Vec<usize>>,
    edge_nodes: Vec<Vec<usize>>,
    node_degree: Vec<usize>,
    edge_degree: Vec<usize>,
}

impl IncidenceSystem {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edge_nodes.len()
    }

    /// Edges incident to `v`, ascending.
    pub fn node_edges(&self, v: usize) -> &[usize] {
        &self.node_edges[v]
    }

    /// Members of edge `e`, ascending.
    pub fn edge_nodes(&self, e: usize) -> &[usize] {
        &self.edge_nodes[e]
    }

    pub fn node_degrees(&self) -> &[usize] {
        &self.node_degree
    }

    pub fn edge_degrees(&self) -> &[usize] {
        &self.edge_degree
    }

    pub fn nnz(&self) -> usize {
        self.edge_nodes.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, v: usize, e: usize) -> bool {
        self.node_edges[v].binary_search(&e).is_ok()
    }

    /// Dense `n × m` 0/1 matrix, row-major. Intended for tests and small graphs.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut h = vec![vec![0.0; self.edge_count()]; self.n];
        for (e, nodes) in self.edge_nodes.iter().enumerate() {
            for &v in nodes {
                h[v][e] = 1.0;
            }
        }
        h
    }
}

/// Pseudo-inverse of a diagonal entry: zero maps to zero.
pub fn pinv(d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        1.0 / d
    }
}

pub fn build_incidence(hg: &Hypergraph) -> IncidenceSystem {
    let n = hg.node_count();
    let mut node_edges = vec![Vec::new(); n];
    for (e, edge) in hg.edges().iter().enumerate() {
        for &v in edge {
            node_edges[v].push(e);
        }
    }
    let node_degree = node_edges.iter().map(Vec::len).collect();
    let edge_nodes: Vec<Vec<usize>> = hg.edges().to_vec();
    let edge_degree = edge_nodes.iter().map(Vec::len).collect();
    IncidenceSystem {
        n,
        node_edges,
        edge_nodes,
        node_degree,
        edge_degree,
    }
}

/// Simple undirected graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseGraph {
    n: usize,
    neighbors: Vec<Vec<usize>>,
}

impl PairwiseGraph {
    pub fn from_edges(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut sets = vec![BTreeSet::new(); n];
        for &(u, v) in pairs {
            if u >= n || v >= n {
                return Err(Error::Validation(format!("edge ({u}, {v}) out of range for n = {n}")));
            }
            if u != v {
                sets[u].insert(v);
                sets[v].insert(u);
            }
        }
        Ok(Self {
            n,
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Connects every pair of distinct nodes that share a hyperedge.
pub fn clique_expand(hg: &Hypergraph) -> PairwiseGraph {
    let mut sets = vec![BTreeSet::new(); hg.node_count()];
    for edge in hg.edges() {
        for (i, &u) in edge.iter().enumerate() {
            for &v in &edge[i + 1..] {
                sets[u].insert(v);
                sets[v].insert(u);
            }
        }
    }
    PairwiseGraph {
        n: hg.node_count(),
        neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
    }
}

/// Random hypergraph with `m` edges whose sizes are uniform in
/// `[size_min, size_max]`. Nodes left uncovered are appended to random edges.
pub fn generate_synthetic(
    n: usize,
    m: usize,
    size_min: usize,
    size_max: usize,
    seed: u64,
) -> Result<Hypergraph> {
    if !(2 <= size_min && size_min <= size_max && size_max <= n) {
        return Err(Error::Validation(format!(
            "edge size bounds must satisfy 2 <= {size_min} <= {size_max} <= n = {n}"
        )));
    }
    if m == 0 {
        return Err(Error::Validation("at least one hyperedge is required".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut edges: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            let size = rng.gen_range(size_min..=size_max);
            sample(&mut rng, n, size).into_vec()
        })
        .collect();
    let mut covered = vec![false; n];
    for edge in &edges {
        for &v in edge {
            covered[v] = true;
        }
    }
    for v in (0..n).filter(|&v| !covered[v]) {
        let e = rng.gen_range(0..m);
        edges[e].push(v);
    }
    Hypergraph::new(n, edges)
}
