mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng as _;

use sdm_core::hypergraph::Hypergraph;
use sdm_core::layers::GraphOperators;
use sdm_core::rng::rng_from_seed;
use sdm_core::ssm::{
    aggregate_with_weights, graph_scan, lti_kernel_apply, neighbor_aggregate, scan_step, Coupling, SsmBlock,
    SsmBlockConfig,
};
use sdm_core::tensor::{Graph, ParamStore, Tensor};

fn block(channels: usize, d_state: usize, selective: bool, coupling: Coupling, seed: u64) -> (ParamStore, SsmBlock) {
    let mut store = ParamStore::new();
    let cfg = SsmBlockConfig {
        channels,
        d_state,
        selective,
        coupling,
        head_hidden: 6,
    };
    let mut rng = rng_from_seed(seed);
    let block = SsmBlock::new(&mut store, "block", cfg, &mut rng).unwrap();
    for v in store.value_mut(block.a_log).data_mut() {
        *v = rng.gen_range(-1.0..2.0);
    }
    for v in store.value_mut(block.d_skip).data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    (store, block)
}

fn scalar_phi(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lti_recurrence_matches_convolution(seed in any::<u64>(), len in 1usize..=8, n in 1usize..=5) {
        let hg = Hypergraph::new(n.max(2), vec![(0..n.max(2)).collect()]).unwrap();
        let ops = ops(&hg);
        let n = ops.n;
        let (store, block) = block(3, 4, false, Coupling::Off, seed);
        let xs: Vec<Tensor> = (0..len).map(|t| random_tensor(n, 3, seed ^ t as u64)).collect();
        let mut g = Graph::new();
        let vars: Vec<_> = xs.iter().map(|x| g.constant(x.clone()).unwrap()).collect();
        let out = graph_scan(&mut g, &store, &block, &ops, &vars).unwrap();
        let conv = lti_kernel_apply(&store, &block, &xs).unwrap();
        for (y, c) in out.outputs.iter().zip(&conv) {
            prop_assert!(g.value(*y).max_abs_diff(c) <= 1e-10);
        }
    }

    #[test]
    fn scan_step_decomposes_term_by_term(
        seed in any::<u64>(),
        coupling in prop_oneof![Just(Coupling::Weighted), Just(Coupling::Unweighted), Just(Coupling::Off)],
        selective in any::<bool>(),
    ) {
        let (c, s) = (2, 3);
        let hg = random_hypergraph(6, 3, seed);
        let ops = ops(&hg);
        let (store, block) = block(c, s, selective, coupling, seed);
        let x = random_tensor(6, c, seed ^ 7);
        let h_prev = random_tensor(6, c * s, seed ^ 8);

        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let hv = g.constant(h_prev.clone()).unwrap();
        let step = scan_step(&mut g, &store, &block, &ops, xv, Some(hv)).unwrap();

        let neighbor = {
            let mut g2 = Graph::new();
            let hv2 = g2.constant(h_prev.clone()).unwrap();
            match coupling {
                Coupling::Off => None,
                Coupling::Unweighted => {
                    let agg = aggregate_with_weights(&mut g2, &ops, hv2, None).unwrap();
                    Some(g2.value(agg.h_n).clone())
                }
                Coupling::Weighted => {
                    let agg = neighbor_aggregate(&mut g2, &store, &ops, block.head.as_ref(), hv2).unwrap();
                    Some(g2.value(agg.h_n).clone())
                }
            }
        };
        prop_assert_eq!(neighbor.is_some(), step.neighbor.is_some());

        let a = block.a_diagonal(&store);
        let b = g.value(step.params.b);
        let cm = g.value(step.params.c);
        let delta = g.value(step.params.delta);
        let d_skip = store.value(block.d_skip).data();
        let h = g.value(step.h);
        let y = g.value(step.y);
        for i in 0..6 {
            for ch in 0..c {
                let dt = delta.get(i, ch);
                let mut read = 0.0;
                for k in 0..s {
                    let z = dt * a[k];
                    let a_bar = z.exp();
                    let b_bar_x = scalar_phi(z) * dt * b.get(i, k) * x.get(i, ch);
                    let j = ch * s + k;
                    prop_assert!((g.value(step.a_bar).get(i, j) - a_bar).abs() <= 1e-12);
                    prop_assert!((g.value(step.b_bar_x).get(i, j) - b_bar_x).abs() <= 1e-12);
                    let coupled = neighbor.as_ref().map_or(0.0, |t| t.get(i, j));
                    let expected = a_bar * h_prev.get(i, j) + b_bar_x + coupled;
                    prop_assert!((h.get(i, j) - expected).abs() <= 1e-12);
                    read += cm.get(i, k) * h.get(i, j);
                }
                prop_assert!((y.get(i, ch) - (read + d_skip[ch] * x.get(i, ch))).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn uncoupled_state_norm_decays_without_input(seed in any::<u64>(), selective in any::<bool>()) {
        let hg = random_hypergraph(5, 2, seed);
        let ops = ops(&hg);
        let (store, block) = block(2, 4, selective, Coupling::Off, seed);
        let mut g = Graph::new();
        let mut xs = vec![g.constant(random_tensor(5, 2, seed ^ 9)).unwrap()];
        for _ in 0..6 {
            xs.push(g.constant(Tensor::zeros(5, 2)).unwrap());
        }
        let out = graph_scan(&mut g, &store, &block, &ops, &xs).unwrap();
        let norms: Vec<f64> = out.states.iter().map(|h| g.value(*h).squared_norm().sqrt()).collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0], "norms {:?}", norms);
        }
    }

    #[test]
    fn scan_step_is_permutation_equivariant(seed in any::<u64>()) {
        let hg = random_hypergraph(7, 3, seed);
        let perm = random_permutation(7, seed ^ 10);
        let hg_p = permute_hypergraph(&hg, &perm);
        let (store, block) = block(2, 3, true, Coupling::Weighted, seed);
        let x = random_tensor(7, 2, seed ^ 11);
        let h_prev = random_tensor(7, 6, seed ^ 12);
        let run = |ops: &GraphOperators, x: &Tensor, h: &Tensor| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone()).unwrap();
            let hv = g.constant(h.clone()).unwrap();
            let step = scan_step(&mut g, &store, &block, ops, xv, Some(hv)).unwrap();
            (g.value(step.h).clone(), g.value(step.y).clone())
        };
        let (h, y) = run(&ops(&hg), &x, &h_prev);
        let (h_p, y_p) = run(&ops(&hg_p), &relabel_rows(&x, &perm), &relabel_rows(&h_prev, &perm));
        prop_assert!(h_p.max_abs_diff(&relabel_rows(&h, &perm)) <= 1e-12);
        prop_assert!(y_p.max_abs_diff(&relabel_rows(&y, &perm)) <= 1e-12);
    }
}

#[test]
fn first_step_has_no_neighbor_term() {
    let hg = random_hypergraph(4, 2, 1);
    let (store, block) = block(2, 2, true, Coupling::Weighted, 1);
    let mut g = Graph::new();
    let x = g.constant(random_tensor(4, 2, 2)).unwrap();
    let step = scan_step(&mut g, &store, &block, &ops(&hg), x, None).unwrap();
    assert!(step.neighbor.is_none());
    assert_eq!(g.value(step.h), g.value(step.b_bar_x));
}

#[test]
fn backward_is_bit_deterministic() {
    let hg = random_hypergraph(5, 3, 4);
    let ops = ops(&hg);
    let (store, block) = block(2, 3, true, Coupling::Weighted, 4);
    let grads = || {
        let mut g = Graph::new();
        let xs: Vec<_> = (0..3).map(|t| g.constant(random_tensor(5, 2, t)).unwrap()).collect();
        let out = graph_scan(&mut g, &store, &block, &ops, &xs).unwrap();
        let loss = g.sum(*out.outputs.last().unwrap()).unwrap();
        g.backward(loss).unwrap()
    };
    assert_eq!(grads(), grads());
}
