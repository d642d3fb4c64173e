mod common;

use common::*;
use proptest::prelude::*;

use sdm_core::hypergraph::{build_incidence, clique_expand, parse_hypergraph, Hypergraph};
use sdm_core::layers::{hgnn_forward, Activation, HgnnLayer, MlpHead};
use sdm_core::rng::rng_from_seed;
use sdm_core::ssm::{aggregate_with_weights, neighbor_aggregate};
use sdm_core::tensor::{Graph, ParamStore, Tensor};

fn dense_hgnn(hg: &Hypergraph) -> Vec<Vec<f64>> {
    let d = dense_incidence(hg);
    let w: Vec<f64> = hg.edge_weights().iter().zip(&d.de_inv).map(|(w, de)| w * de).collect();
    let dv_isqrt: Vec<f64> = d.dv_inv.iter().map(|x| x.sqrt()).collect();
    let left = dense_matmul(&dense_matmul(&diag(&dv_isqrt), &d.h), &diag(&w));
    dense_matmul(&dense_matmul(&left, &transpose(&d.h)), &diag(&dv_isqrt))
}

/// `H D_E⁻¹ Ω Hᵀ D_V⁻¹ h`, evaluated densely.
fn dense_aggregate(hg: &Hypergraph, omega: &[f64], h: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = dense_incidence(hg);
    let to_edge = dense_matmul(&transpose(&d.h), &diag(&d.dv_inv));
    let weights: Vec<f64> = d.de_inv.iter().zip(omega).map(|(a, b)| a * b).collect();
    let to_node = dense_matmul(&d.h, &diag(&weights));
    dense_matmul(&to_node, &dense_matmul(&to_edge, h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incidence_round_trips_and_degrees_sum_to_nnz((n, m, seed) in hypergraph_params(12)) {
        let hg = random_hypergraph(n, m, seed);
        let inc = build_incidence(&hg);
        let rebuilt: Vec<Vec<usize>> = (0..inc.edge_count()).map(|e| inc.edge_nodes(e).to_vec()).collect();
        prop_assert_eq!(rebuilt.as_slice(), hg.edges());
        let reparsed = parse_hypergraph(&hg.to_text()).unwrap();
        prop_assert_eq!(reparsed.edges(), hg.edges());
        let dv: usize = inc.node_degrees().iter().sum();
        let de: usize = inc.edge_degrees().iter().sum();
        prop_assert_eq!(dv, inc.nnz());
        prop_assert_eq!(de, inc.nnz());
    }

    #[test]
    fn clique_expansion_is_off_diagonal_pattern_of_h_ht((n, m, seed) in hypergraph_params(12)) {
        let hg = random_hypergraph(n, m, seed);
        let d = dense_incidence(&hg);
        let hht = dense_matmul(&d.h, &transpose(&d.h));
        let g = clique_expand(&hg);
        for u in 0..n {
            for v in 0..n {
                prop_assert_eq!(g.has_edge(u, v), u != v && hht[u][v] > 0.0, "pair ({}, {})", u, v);
            }
        }
    }

    #[test]
    fn operators_match_dense_formulas((n, m, seed) in hypergraph_params(12)) {
        let hg = random_hypergraph(n, m, seed);
        let ops = ops(&hg);
        prop_assert!(max_abs_diff(&ops.hgnn.to_dense().to_rows(), &dense_hgnn(&hg)) <= 1e-12);
        let d = dense_incidence(&hg);
        let to_edge = dense_matmul(&transpose(&d.h), &diag(&d.dv_inv));
        let to_node = dense_matmul(&d.h, &diag(&d.de_inv));
        prop_assert!(max_abs_diff(&ops.node_to_edge.to_dense().to_rows(), &to_edge) <= 1e-12);
        prop_assert!(max_abs_diff(&ops.edge_to_node.to_dense().to_rows(), &to_node) <= 1e-12);
    }

    #[test]
    fn spmm_matches_dense_product((n, m, seed) in hypergraph_params(12), width in 1usize..5) {
        let hg = random_hypergraph(n, m, seed);
        let ops = ops(&hg);
        let x = random_tensor(n, width, seed ^ 1);
        let sparse = Tensor::matrix(n, width, ops.hgnn.spmm(x.data(), width)).unwrap();
        let dense = ops.hgnn.to_dense().matmul(&x).unwrap();
        prop_assert!(sparse.max_abs_diff(&dense) <= 1e-12);
    }

    #[test]
    fn two_stage_aggregation_preserves_mass((n, m, seed) in hypergraph_params(12)) {
        let hg = random_hypergraph(n, m, seed);
        let ops = ops(&hg);
        let h = random_tensor(n, 3, seed ^ 2);
        let mut g = Graph::new();
        let hv = g.constant(h.clone()).unwrap();
        let agg = aggregate_with_weights(&mut g, &ops, hv, None).unwrap();
        for (name, op) in [("node_to_edge", &ops.node_to_edge), ("edge_to_node", &ops.edge_to_node)] {
            let dense = op.to_dense().to_rows();
            for c in 0..op.cols() {
                let col: f64 = dense.iter().map(|r| r[c]).sum();
                prop_assert!((col - 1.0).abs() <= 1e-12, "{} column {} sums to {}", name, c, col);
            }
        }
        let out = g.value(agg.h_n);
        for c in 0..3 {
            let before: f64 = (0..n).map(|v| h.get(v, c)).sum();
            let after: f64 = (0..n).map(|v| out.get(v, c)).sum();
            prop_assert!((before - after).abs() <= 1e-12);
        }
    }

    #[test]
    fn neighbor_aggregate_matches_dense_oracle((n, m, seed) in (3usize..=50, 1usize..=20, any::<u64>())) {
        let hg = random_hypergraph(n, m, seed);
        let ops = ops(&hg);
        let h = random_tensor(n, 4, seed ^ 3);
        let mut store = ParamStore::new();
        let head = MlpHead::new(&mut store, "head", 4, 5, &mut rng_from_seed(seed)).unwrap();
        let mut g = Graph::new();
        let hv = g.constant(h.clone()).unwrap();
        let agg = neighbor_aggregate(&mut g, &store, &ops, Some(&head), hv).unwrap();
        let omega = g.value(agg.omega.unwrap()).data().to_vec();
        prop_assert!(omega.iter().all(|w| (0.0..=1.0).contains(w)));
        let expected = dense_aggregate(&hg, &omega, &h.to_rows());
        prop_assert!(max_abs_diff(&g.value(agg.h_n).to_rows(), &expected) <= 1e-12);

        let mut g = Graph::new();
        let hv = g.constant(h.clone()).unwrap();
        let plain = aggregate_with_weights(&mut g, &ops, hv, None).unwrap();
        let expected = dense_aggregate(&hg, &vec![1.0; hg.edge_count()], &h.to_rows());
        prop_assert!(max_abs_diff(&g.value(plain.h_n).to_rows(), &expected) <= 1e-12);
    }

    #[test]
    fn hgnn_is_permutation_equivariant(seed in any::<u64>()) {
        let hg = random_hypergraph(8, 4, seed);
        let perm = random_permutation(8, seed ^ 4);
        let hg_p = permute_hypergraph(&hg, &perm);
        let x = random_tensor(8, 3, seed ^ 5);
        let mut store = ParamStore::new();
        let layer = HgnnLayer::new(&mut store, "hgnn", 3, 2, Activation::Identity, &mut rng_from_seed(seed)).unwrap();
        let run = |hg: &Hypergraph, x: &Tensor| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone()).unwrap();
            let y = hgnn_forward(&mut g, &store, &layer, &ops(hg), xv).unwrap();
            g.value(y).clone()
        };
        let y = run(&hg, &x);
        let y_p = run(&hg_p, &relabel_rows(&x, &perm));
        prop_assert!(y_p.max_abs_diff(&relabel_rows(&y, &perm)) <= 1e-12);
    }
}

#[test]
fn path_hand_case() {
    let hg = Hypergraph::new(3, vec![vec![0, 1], vec![1, 2]]).unwrap();
    let ops = ops(&hg);
    let mut g = Graph::new();
    let h = g.constant(Tensor::column(vec![1.0, 0.0, 0.0])).unwrap();
    let agg = aggregate_with_weights(&mut g, &ops, h, None).unwrap();
    assert_eq!(g.value(agg.h_edge).data(), &[1.0, 0.0]);
    assert_eq!(g.value(agg.h_n).data(), &[0.5, 0.5, 0.0]);
}

#[test]
fn edge_to_node_is_not_row_stochastic() {
    // Node 1 sits in two edges of size two, so it receives 1/2 + 1/2 while
    // the end nodes receive 1/2: only the columns sum to one.
    let hg = Hypergraph::new(3, vec![vec![0, 1], vec![1, 2]]).unwrap();
    let rows = ops(&hg).edge_to_node.to_dense().to_rows();
    let sums: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    assert_eq!(sums, vec![0.5, 1.0, 0.5]);
}
