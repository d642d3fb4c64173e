//! Selective state-space blocks with zero-order-hold discretization and a
//! hypergraph-coupled state update.
//!
//! Hidden states are stored as `n × (channels · d_state)` tensors, channel
//! major: entry `c · d_state + s` of a node row holds state `s` of channel `c`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{edge_weight_head, init_uniform, GraphOperators, MlpHead};
use crate::rng::Rng;
use crate::tensor::expm1_ratio;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Scalar ZOH for a diagonal system: `Ā = exp(ΔA)`,
/// `B̄ = (ΔA)⁻¹(exp(ΔA) − 1)·ΔB`, and `B̄ = ΔB` once `|ΔA| < 1e-8`.
pub fn zoh_discretize(a: &[f64], b: &[f64], delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Contract(format!("step size must be positive and finite, got {delta}")));
    }
    if a.len() != b.len() {
        return Err(Error::Contract(format!("A has {} entries but B has {}", a.len(), b.len())));
    }
    let a_bar = a.iter().map(|&ai| (delta * ai).exp()).collect();
    let b_bar = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| expm1_ratio(delta * ai) * delta * bi)
        .collect();
    Ok((a_bar, b_bar))
}

/// How hidden states mix across hyperedges between scan steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `h_N = H D_E⁻¹ Ω Hᵀ D_V⁻¹ h` with Ω from the edge head.
    Weighted,
    /// As `Weighted` with Ω = I.
    Unweighted,
    /// No neighbor term.
    Off,
}

impl std::str::FromStr for Coupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Coupling::Weighted),
            "unweighted" => Ok(Coupling::Unweighted),
            "off" => Ok(Coupling::Off),
            other => Err(Error::Validation(format!(
                "unknown coupling {other:?} (expected weighted, unweighted or off)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsmBlockConfig {
    pub channels: usize,
    pub d_state: usize,
    /// Input-dependent `B`, `C` and `Δ`; when false they are fixed parameters.
    pub selective: bool,
    pub coupling: Coupling,
    pub head_hidden: usize,
}

#[derive(Debug, Clone)]
pub enum Projections {
    /// `B = x W_B`, `C = x W_C`, `Δ = softplus(x W_Δ + b_Δ)`.
    Selective {
        w_b: ParamId,
        w_c: ParamId,
        w_dt: ParamId,
        b_dt: ParamId,
    },
    /// Rows `B`, `C` and `Δ = softplus(b_Δ)` shared by every node and step.
    Fixed { b: ParamId, c: ParamId, b_dt: ParamId },
}

#[derive(Debug, Clone)]
pub struct SsmBlock {
    pub config: SsmBlockConfig,
    /// `A = −exp(A_log)`, one entry per state, shared across channels.
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub projections: Projections,
    pub head: Option<MlpHead>,
}

/// Inverse of softplus for positive arguments.
fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl SsmBlock {
    pub fn new(store: &mut ParamStore, name: &str, config: SsmBlockConfig, rng: &mut Rng) -> Result<Self> {
        let SsmBlockConfig {
            channels: c,
            d_state: s,
            ..
        } = config;
        if c == 0 || s == 0 {
            return Err(Error::Validation("channels and d_state must be positive".into()));
        }
        let a_log = Tensor::row((1..=s).map(|k| (k as f64).ln()).collect());
        let a_log = store.add(&format!("{name}.a_log"), a_log)?;
        let d_skip = store.add(&format!("{name}.d_skip"), Tensor::filled(1, c, 1.0))?;
        let dt_bias: Vec<f64> = (0..c)
            .map(|_| softplus_inverse((rng.gen_range(0.01f64.ln()..1.0f64.ln())).exp()))
            .collect();
        let projections = if config.selective {
            Projections::Selective {
                w_b: store.add(&format!("{name}.w_b"), init_uniform(c, s, c, rng))?,
                w_c: store.add(&format!("{name}.w_c"), init_uniform(c, s, c, rng))?,
                w_dt: store.add(&format!("{name}.w_dt"), init_uniform(c, c, c, rng))?,
                b_dt: store.add(&format!("{name}.b_dt"), Tensor::row(dt_bias))?,
            }
        } else {
            Projections::Fixed {
                b: store.add(&format!("{name}.b"), init_uniform(1, s, 1, rng))?,
                c: store.add(&format!("{name}.c"), init_uniform(1, s, 1, rng))?,
                b_dt: store.add(&format!("{name}.b_dt"), Tensor::row(dt_bias))?,
            }
        };
        let head = match config.coupling {
            Coupling::Weighted => Some(MlpHead::new(store, &format!("{name}.edge_head"), c * s, config.head_hidden, rng)?),
            Coupling::Unweighted | Coupling::Off => None,
        };
        Ok(Self {
            config,
            a_log,
            d_skip,
            projections,
            head,
        })
    }

    pub fn state_width(&self) -> usize {
        self.config.channels * self.config.d_state
    }

    /// The diagonal of `A`.
    pub fn a_diagonal(&self, store: &ParamStore) -> Vec<f64> {
        store.value(self.a_log).data().iter().map(|x| -x.exp()).collect()
    }
}

/// Per-node `B_t` (n × d_state), `C_t` (n × d_state) and `Δ_t` (n × channels).
#[derive(Debug, Clone, Copy)]
pub struct SelectiveParams {
    pub b: Var,
    pub c: Var,
    pub delta: Var,
}

pub fn selective_params(g: &mut Graph, store: &ParamStore, block: &SsmBlock, x: Var) -> Result<SelectiveParams> {
    let (n, cols) = g.value(x).dims2()?;
    if cols != block.config.channels {
        return Err(Error::Contract(format!(
            "ssm block expects {} channels, got input of shape {:?}",
            block.config.channels,
            g.value(x).shape()
        )));
    }
    match block.projections {
        Projections::Selective { w_b, w_c, w_dt, b_dt } => {
            let w_b = g.param(store, w_b)?;
            let w_c = g.param(store, w_c)?;
            let w_dt = g.param(store, w_dt)?;
            let b_dt = g.param(store, b_dt)?;
            let b = g.matmul(x, w_b)?;
            let c = g.matmul(x, w_c)?;
            let dt = g.matmul(x, w_dt)?;
            let dt = g.add_row(dt, b_dt)?;
            let delta = g.softplus(dt)?;
            Ok(SelectiveParams { b, c, delta })
        }
        Projections::Fixed { b, c, b_dt } => {
            let b = g.param(store, b)?;
            let c = g.param(store, c)?;
            let b_dt = g.param(store, b_dt)?;
            let b = g.broadcast_rows(b, n)?;
            let c = g.broadcast_rows(c, n)?;
            let dt = g.broadcast_rows(b_dt, n)?;
            let delta = g.softplus(dt)?;
            Ok(SelectiveParams { b, c, delta })
        }
    }
}

/// Result of one graph-coupled aggregation.
#[derive(Debug, Clone, Copy)]
pub struct NeighborAggregate {
    /// `Hᵀ D_V⁻¹ h`, one averaged state per hyperedge.
    pub h_edge: Var,
    /// Per-edge weights (m × 1) when the coupling is weighted.
    pub omega: Option<Var>,
    pub h_n: Var,
}

/// `h_N = H D_E⁻¹ Ω Hᵀ D_V⁻¹ h` with an explicit Ω (`None` means Ω = I).
pub fn aggregate_with_weights(g: &mut Graph, ops: &GraphOperators, h: Var, omega: Option<Var>) -> Result<NeighborAggregate> {
    let h_edge = g.spmm(&ops.node_to_edge, h)?;
    let weighted = match omega {
        Some(w) => g.scale_rows(h_edge, w)?,
        None => h_edge,
    };
    let h_n = g.spmm(&ops.edge_to_node, weighted)?;
    Ok(NeighborAggregate { h_edge, omega, h_n })
}

/// Node states averaged into hyperedges, reweighted by the edge head and
/// spread back onto member nodes.
pub fn neighbor_aggregate(
    g: &mut Graph,
    store: &ParamStore,
    ops: &GraphOperators,
    head: Option<&MlpHead>,
    h: Var,
) -> Result<NeighborAggregate> {
    let h_edge = g.spmm(&ops.node_to_edge, h)?;
    let omega = match head {
        Some(head) => Some(edge_weight_head(g, store, head, h_edge)?),
        None => None,
    };
    let weighted = match omega {
        Some(w) => g.scale_rows(h_edge, w)?,
        None => h_edge,
    };
    let h_n = g.spmm(&ops.edge_to_node, weighted)?;
    Ok(NeighborAggregate { h_edge, omega, h_n })
}

/// Outputs `y_t` (n × channels) and states `h_t` in scan order.
#[derive(Debug, Clone, Default)]
pub struct ScanOutput {
    pub outputs: Vec<Var>,
    pub states: Vec<Var>,
}

/// The pieces of one recurrence step, kept separately for inspection.
#[derive(Debug, Clone, Copy)]
pub struct StepTerms {
    pub params: SelectiveParams,
    pub a_bar: Var,
    pub b_bar_x: Var,
    pub neighbor: Option<NeighborAggregate>,
    pub h: Var,
    pub y: Var,
}

/// One step: `h_t = Ā∘h_{t−1} + B̄∘x_t + h_N(h_{t−1})`, `y_t = C_t·h_t + D∘x_t`.
pub fn scan_step(
    g: &mut Graph,
    store: &ParamStore,
    block: &SsmBlock,
    ops: &GraphOperators,
    x: Var,
    h_prev: Option<Var>,
) -> Result<StepTerms> {
    let n = g.value(x).dims2()?.0;
    if n != ops.n {
        return Err(Error::Contract(format!("scan input has {n} rows for a {}-node hypergraph", ops.n)));
    }
    let params = selective_params(g, store, block, x)?;

    let a_log = g.param(store, block.a_log)?;
    let a = g.exp(a_log)?;
    let a = g.scale(a, -1.0)?;
    let a = g.broadcast_rows(a, n)?;
    let d_a = g.row_outer(params.delta, a)?;
    // Ā = exp(ΔA) = 1 + ΔA·φ(ΔA), sharing one expm1 with the input gain.
    let gain = g.expm1_ratio(d_a)?;
    let za = g.mul(d_a, gain)?;
    let a_bar = g.shift(za, 1.0)?;
    let dx = g.mul(params.delta, x)?;
    let dbx = g.row_outer(dx, params.b)?;
    let b_bar_x = g.mul(gain, dbx)?;

    let (h, neighbor) = match h_prev {
        None => (b_bar_x, None),
        Some(prev) => {
            let decayed = g.mul(a_bar, prev)?;
            let h = g.add(decayed, b_bar_x)?;
            let neighbor = match block.config.coupling {
                Coupling::Off => None,
                Coupling::Unweighted => Some(aggregate_with_weights(g, ops, prev, None)?),
                Coupling::Weighted => Some(neighbor_aggregate(g, store, ops, block.head.as_ref(), prev)?),
            };
            match neighbor {
                Some(agg) => (g.add(h, agg.h_n)?, neighbor),
                None => (h, None),
            }
        }
    };

    let d_skip = g.param(store, block.d_skip)?;
    let read = g.row_contract(h, params.c)?;
    let skip = g.mul_row(x, d_skip)?;
    let y = g.add(read, skip)?;
    Ok(StepTerms {
        params,
        a_bar,
        b_bar_x,
        neighbor,
        h,
        y,
    })
}

/// Runs the recurrence over `xs` in the order given, starting from `h = 0`.
/// Callers pass snapshots latest first.
pub fn graph_scan(g: &mut Graph, store: &ParamStore, block: &SsmBlock, ops: &GraphOperators, xs: &[Var]) -> Result<ScanOutput> {
    if xs.is_empty() {
        return Err(Error::Contract("graph_scan needs at least one step".into()));
    }
    let mut out = ScanOutput::default();
    let mut h = None;
    for &x in xs {
        let step = scan_step(g, store, block, ops, x, h)?;
        out.outputs.push(step.y);
        out.states.push(step.h);
        h = Some(step.h);
    }
    Ok(out)
}

/// Convolution kernel of a time-invariant block: `K̄_j[c] = Σ_s C_s Ā_{cs}^j B̄_{cs}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiKernel {
    /// `len × channels`.
    pub taps: Vec<Vec<f64>>,
    pub d_skip: Vec<f64>,
}

/// `K̄_j = Σ_s c_s a_s^j b_s` for one channel.
pub fn kernel_from_discrete(a_bar: &[f64], b_bar: &[f64], c: &[f64], len: usize) -> Vec<f64> {
    let mut powers = vec![1.0; a_bar.len()];
    let mut taps = Vec::with_capacity(len);
    for _ in 0..len {
        taps.push(powers.iter().zip(b_bar).zip(c).map(|((p, b), c)| c * p * b).sum());
        for (p, a) in powers.iter_mut().zip(a_bar) {
            *p *= a;
        }
    }
    taps
}

pub fn lti_kernel(store: &ParamStore, block: &SsmBlock, len: usize) -> Result<LtiKernel> {
    let Projections::Fixed { b, c, b_dt } = block.projections else {
        return Err(Error::Contract("the convolution kernel requires a non-selective block".into()));
    };
    if block.config.coupling != Coupling::Off {
        return Err(Error::Contract("the convolution kernel requires graph coupling to be off".into()));
    }
    let a = block.a_diagonal(store);
    let (b, c) = (store.value(b).data(), store.value(c).data());
    let channels = block.config.channels;
    let mut per_channel = Vec::with_capacity(channels);
    for &dt in store.value(b_dt).data() {
        let delta = crate::tensor::softplus(dt);
        let (a_bar, b_bar) = zoh_discretize(&a, b, delta)?;
        per_channel.push(kernel_from_discrete(&a_bar, &b_bar, c, len));
    }
    let taps = (0..len).map(|j| per_channel.iter().map(|k| k[j]).collect()).collect();
    Ok(LtiKernel {
        taps,
        d_skip: store.value(block.d_skip).data().to_vec(),
    })
}

/// `y_t = Σ_{j≤t} K̄_j x_{t−j} + D∘x_t`, node by node.
pub fn lti_kernel_apply(store: &ParamStore, block: &SsmBlock, xs: &[Tensor]) -> Result<Vec<Tensor>> {
    let kernel = lti_kernel(store, block, xs.len())?;
    let channels = block.config.channels;
    let (n, cols) = match xs.first() {
        Some(x) => x.dims2()?,
        None => return Ok(Vec::new()),
    };
    if cols != channels || xs.iter().any(|x| x.shape() != [n, channels]) {
        return Err(Error::Contract(format!("inputs must all be {n}×{channels}")));
    }
    let mut ys = Vec::with_capacity(xs.len());
    for t in 0..xs.len() {
        let mut y = vec![0.0; n * channels];
        for (j, taps) in kernel.taps.iter().enumerate().take(t + 1) {
            for (o, (x, k)) in y.iter_mut().zip(xs[t - j].data().iter().zip(taps.iter().cycle())) {
                *o += k * x;
            }
        }
        for (o, (x, d)) in y.iter_mut().zip(xs[t].data().iter().zip(kernel.d_skip.iter().cycle())) {
            *o += d * x;
        }
        ys.push(Tensor::matrix(n, channels, y)?);
    }
    Ok(ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::{build_incidence, Hypergraph};
    use crate::rng::rng_from_seed;

    fn ops_for(n: usize, edges: Vec<Vec<usize>>) -> GraphOperators {
        let hg = Hypergraph::new(n, edges).unwrap();
        GraphOperators::new(&build_incidence(&hg), hg.edge_weights()).unwrap()
    }

    fn block(selective: bool, coupling: Coupling, seed: u64) -> (ParamStore, SsmBlock) {
        let mut store = ParamStore::new();
        let cfg = SsmBlockConfig {
            channels: 3,
            d_state: 4,
            selective,
            coupling,
            head_hidden: 5,
        };
        let b = SsmBlock::new(&mut store, "blk", cfg, &mut rng_from_seed(seed)).unwrap();
        (store, b)
    }

    #[test]
    fn zoh_scalar_fixture() {
        let (a, b) = zoh_discretize(&[-1.0], &[1.0], 0.1).unwrap();
        assert!((a[0] - (-0.1f64).exp()).abs() < 1e-15);
        assert!((b[0] - 0.0951625819640404).abs() < 1e-12);
        let (_, b) = zoh_discretize(&[1e-9], &[2.0], 0.5).unwrap();
        assert_eq!(b[0], 1.0);
        assert!(zoh_discretize(&[-1.0], &[1.0], 0.0).is_err());
        assert!(zoh_discretize(&[-1.0], &[1.0], -1.0).is_err());
        let (a, b) = zoh_discretize(&[-2.0], &[1.0], 1e-12).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-11 && b[0].abs() < 1e-11);
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [0.01, 0.3, 1.0, 5.0] {
            assert!((crate::tensor::softplus(softplus_inverse(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_ln2_step_and_zero_projections() {
        let (mut store, blk) = block(true, Coupling::Off, 0);
        if let Projections::Selective { b_dt, .. } = blk.projections {
            store.value_mut(b_dt).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(2, 3)).unwrap();
        let p = selective_params(&mut g, &store, &blk, x).unwrap();
        assert!(g.value(p.delta).data().iter().all(|&d| (d - 2f64.ln()).abs() < 1e-15));
        assert!(g.value(p.b).data().iter().all(|&b| b == 0.0));
        let bad = g.constant(Tensor::zeros(2, 4)).unwrap();
        assert!(selective_params(&mut g, &store, &blk, bad).is_err());
    }

    #[test]
    fn path_aggregation_hand_case() {
        let ops = ops_for(3, vec![vec![0, 1], vec![1, 2]]);
        let mut g = Graph::new();
        let h = g.constant(Tensor::column(vec![1.0, 0.0, 0.0])).unwrap();
        let agg = aggregate_with_weights(&mut g, &ops, h, None).unwrap();
        assert_eq!(g.value(agg.h_edge).data(), &[1.0, 0.0]);
        assert_eq!(g.value(agg.h_n).data(), &[0.5, 0.5, 0.0]);
        let half = g.constant(Tensor::filled(2, 1, 0.5)).unwrap();
        let agg = aggregate_with_weights(&mut g, &ops, h, Some(half)).unwrap();
        assert_eq!(g.value(agg.h_n).data(), &[0.25, 0.25, 0.0]);
    }

    #[test]
    fn single_step_unrolls() {
        let (store, blk) = block(true, Coupling::Weighted, 1);
        let ops = ops_for(4, vec![vec![0, 1, 2], vec![2, 3]]);
        let mut g = Graph::new();
        let x = g.constant(init_uniform(4, 3, 1, &mut rng_from_seed(9))).unwrap();
        let out = graph_scan(&mut g, &store, &blk, &ops, &[x]).unwrap();
        // y = C·(B̄x) + D∘x computed by hand per node
        let a = blk.a_diagonal(&store);
        let xv = g.value(x).clone();
        let mut g2 = Graph::new();
        let x2 = g2.constant(xv.clone()).unwrap();
        let p = selective_params(&mut g2, &store, &blk, x2).unwrap();
        let (bt, ct, dt) = (g2.value(p.b), g2.value(p.c), g2.value(p.delta));
        let d = store.value(blk.d_skip).data();
        for i in 0..4 {
            for c in 0..3 {
                let (_, bbar) = zoh_discretize(&a, bt.row_slice(i), dt.get(i, c)).unwrap();
                let expected: f64 = (0..4).map(|s| ct.get(i, s) * bbar[s] * xv.get(i, c)).sum::<f64>() + d[c] * xv.get(i, c);
                assert!((g.value(out.outputs[0]).get(i, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_sequence_stays_zero() {
        let (store, blk) = block(true, Coupling::Weighted, 2);
        let ops = ops_for(4, vec![vec![0, 1, 2], vec![2, 3]]);
        let mut g = Graph::new();
        let xs: Vec<Var> = (0..3).map(|_| g.constant(Tensor::zeros(4, 3)).unwrap()).collect();
        let out = graph_scan(&mut g, &store, &blk, &ops, &xs).unwrap();
        for y in out.outputs {
            assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        }
        assert!(graph_scan(&mut g, &store, &blk, &ops, &[]).is_err());
    }

    #[test]
    fn kernel_geometric_fixture() {
        assert_eq!(kernel_from_discrete(&[0.5], &[1.0], &[1.0], 3), vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn kernel_requires_fixed_uncoupled_block() {
        let (store, blk) = block(true, Coupling::Off, 0);
        assert!(matches!(lti_kernel(&store, &blk, 3), Err(Error::Contract(_))));
        let (store, blk) = block(false, Coupling::Unweighted, 0);
        assert!(matches!(lti_kernel(&store, &blk, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn impulse_response_is_kernel_plus_skip() {
        let (store, blk) = block(false, Coupling::Off, 4);
        let k = lti_kernel(&store, &blk, 3).unwrap();
        let xs = vec![Tensor::filled(1, 3, 1.0), Tensor::zeros(1, 3), Tensor::zeros(1, 3)];
        let ys = lti_kernel_apply(&store, &blk, &xs).unwrap();
        for c in 0..3 {
            assert!((ys[0].get(0, c) - (k.taps[0][c] + k.d_skip[c])).abs() < 1e-15);
            assert!((ys[1].get(0, c) - k.taps[1][c]).abs() < 1e-15);
            assert!((ys[2].get(0, c) - k.taps[2][c]).abs() < 1e-15);
        }
    }

    #[test]
    fn coupling_parses() {
        assert_eq!("off".parse::<Coupling>().unwrap(), Coupling::Off);
        assert!("none".parse::<Coupling>().is_err());
    }
}
