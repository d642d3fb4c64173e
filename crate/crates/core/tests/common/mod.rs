#![allow(dead_code)]

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

use sdm_core::hypergraph::{build_incidence, Hypergraph};
use sdm_core::layers::GraphOperators;
use sdm_core::rng::rng_from_seed;
use sdm_core::tensor::Tensor;

/// Random hypergraph with every node covered by at least one edge.
pub fn random_hypergraph(n: usize, m: usize, seed: u64) -> Hypergraph {
    let mut rng = rng_from_seed(seed);
    let mut edges: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            let size = rng.gen_range(2..=n.min(4));
            let mut nodes: Vec<usize> = (0..n).collect();
            nodes.shuffle(&mut rng);
            nodes.truncate(size);
            nodes.sort_unstable();
            nodes
        })
        .collect();
    for v in 0..n {
        if !edges.iter().any(|e| e.contains(&v)) {
            let e = rng.gen_range(0..m);
            edges[e].push(v);
            edges[e].sort_unstable();
        }
    }
    Hypergraph::new(n, edges).unwrap()
}

/// `(n, m, seed)` for small random hypergraphs.
pub fn hypergraph_params(max_n: usize) -> impl Strategy<Value = (usize, usize, u64)> {
    (3..=max_n, 1usize..=6, any::<u64>())
}

pub fn ops(hg: &Hypergraph) -> GraphOperators {
    GraphOperators::new(&build_incidence(hg), hg.edge_weights()).unwrap()
}

/// Relabels node `v` as `perm[v]`.
pub fn permute_hypergraph(hg: &Hypergraph, perm: &[usize]) -> Hypergraph {
    let edges = hg
        .edges()
        .iter()
        .map(|e| {
            let mut e: Vec<usize> = e.iter().map(|&v| perm[v]).collect();
            e.sort_unstable();
            e
        })
        .collect();
    Hypergraph::with_weights(hg.node_count(), edges, hg.edge_weights().to_vec()).unwrap()
}

/// Rows of `t` moved so that row `v` lands at `perm[v]`.
pub fn relabel_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut inverse = vec![0; perm.len()];
    for (v, &p) in perm.iter().enumerate() {
        inverse[p] = v;
    }
    t.permute_rows(&inverse).unwrap()
}

pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    perm
}

pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn diag(v: &[f64]) -> Vec<Vec<f64>> {
    (0..v.len())
        .map(|i| (0..v.len()).map(|j| if i == j { v[i] } else { 0.0 }).collect())
        .collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn inv_or_zero(d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        1.0 / d
    }
}

/// Dense `H`, `D_V⁻¹` and `D_E⁻¹` built straight from the edge list.
pub struct DenseIncidence {
    pub h: Vec<Vec<f64>>,
    pub dv_inv: Vec<f64>,
    pub de_inv: Vec<f64>,
}

pub fn dense_incidence(hg: &Hypergraph) -> DenseIncidence {
    let (n, m) = (hg.node_count(), hg.edge_count());
    let mut h = vec![vec![0.0; m]; n];
    for (e, nodes) in hg.edges().iter().enumerate() {
        for &v in nodes {
            h[v][e] = 1.0;
        }
    }
    let dv_inv = h.iter().map(|r| inv_or_zero(r.iter().sum())).collect();
    let de_inv = (0..m).map(|e| inv_or_zero(h.iter().map(|r| r[e]).sum())).collect();
    DenseIncidence { h, dv_inv, de_inv }
}
