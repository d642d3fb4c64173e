//! Differentiable building blocks: hypergraph convolution, linear maps and
//! the hyperedge-weight head.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{pinv, IncidenceSystem};
use crate::rng::Rng;
use crate::tensor::{CsrMatrix, Graph, ParamId, ParamStore, Tensor, Var};

/// Sparse propagation operators derived from one hypergraph.
#[derive(Debug, Clone)]
pub struct GraphOperators {
    pub n: usize,
    pub m: usize,
    /// `D_V^{-1/2} H Ω D_E^{-1} Hᵀ D_V^{-1/2}` with the static Ω.
    pub hgnn: Arc<CsrMatrix>,
    /// `Hᵀ D_V^{-1}` (m × n): node states into hyperedges.
    pub node_to_edge: Arc<CsrMatrix>,
    /// `H D_E^{-1}` (n × m): hyperedge states back onto nodes.
    pub edge_to_node: Arc<CsrMatrix>,
}

impl GraphOperators {
    /// Builds the operators; `edge_weights` is the static diagonal of Ω.
    pub fn new(inc: &IncidenceSystem, edge_weights: &[f64]) -> Result<Self> {
        let (n, m) = (inc.node_count(), inc.edge_count());
        if edge_weights.len() != m {
            return Err(Error::Contract(format!("{} edge weights for {m} hyperedges", edge_weights.len())));
        }
        let dv = inc.node_degrees();
        let de = inc.edge_degrees();
        let inv_sqrt_dv: Vec<f64> = dv.iter().map(|&d| pinv(d as f64).sqrt()).collect();

        let mut hgnn = Vec::new();
        let mut n2e = Vec::new();
        let mut e2n = Vec::new();
        for e in 0..m {
            let nodes = inc.edge_nodes(e);
            let w = edge_weights[e] * pinv(de[e] as f64);
            for &u in nodes {
                n2e.push((e, u, pinv(dv[u] as f64)));
                e2n.push((u, e, pinv(de[e] as f64)));
                for &v in nodes {
                    hgnn.push((u, v, w * inv_sqrt_dv[u] * inv_sqrt_dv[v]));
                }
            }
        }
        Ok(Self {
            n,
            m,
            hgnn: Arc::new(CsrMatrix::from_triplets(n, n, &hgnn)?),
            node_to_edge: Arc::new(CsrMatrix::from_triplets(m, n, &n2e)?),
            edge_to_node: Arc::new(CsrMatrix::from_triplets(n, m, &e2n)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => g.relu(x),
        }
    }
}

/// Uniform `±1/√fan_in`.
pub fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Result<Self> {
        let weight = store.add(&format!("{name}.weight"), init_uniform(d_in, d_out, d_in, rng))?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(1, d_out))?;
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let cols = g.value(x).dims2()?.1;
        if cols != self.d_in {
            return Err(Error::Contract(format!(
                "linear layer expects {} input columns, got shape {:?}",
                self.d_in,
                g.value(x).shape()
            )));
        }
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// One hypergraph convolution `σ(P X W)`.
#[derive(Debug, Clone)]
pub struct HgnnLayer {
    pub weight: ParamId,
    pub activation: Activation,
    pub f_in: usize,
    pub f_out: usize,
}

impl HgnnLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        f_in: usize,
        f_out: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = store.add(&format!("{name}.weight"), init_uniform(f_in, f_out, f_in, rng))?;
        Ok(Self {
            weight,
            activation,
            f_in,
            f_out,
        })
    }
}

pub fn hgnn_forward(
    g: &mut Graph,
    store: &ParamStore,
    layer: &HgnnLayer,
    ops: &GraphOperators,
    x: Var,
) -> Result<Var> {
    let (rows, cols) = g.value(x).dims2()?;
    if rows != ops.n || cols != layer.f_in {
        return Err(Error::Contract(format!(
            "hgnn layer expects {}×{} input, got {:?}",
            ops.n,
            layer.f_in,
            g.value(x).shape()
        )));
    }
    let px = g.spmm(&ops.hgnn, x)?;
    let w = g.param(store, layer.weight)?;
    let pxw = g.matmul(px, w)?;
    layer.activation.apply(g, pxw)
}

/// Two linear layers, each followed by ReLU, then a sigmoid: one weight in
/// (0, 1) per input row.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub hidden: Linear,
    pub output: Linear,
}

impl MlpHead {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), d_in, d_hidden, rng)?,
            output: Linear::new(store, &format!("{name}.output"), d_hidden, 1, rng)?,
        })
    }
}

/// `Ω_e = sigmoid(relu(MLP(h_edge)))` row-wise; returns an `m × 1` column.
pub fn edge_weight_head(g: &mut Graph, store: &ParamStore, head: &MlpHead, h_edge: Var) -> Result<Var> {
    let z = head.hidden.forward(g, store, h_edge)?;
    let z = g.relu(z)?;
    let z = head.output.forward(g, store, z)?;
    let z = g.relu(z)?;
    g.sigmoid(z)
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

    #[test]
    fn two_node_convolution_averages() {
        let ops = ops_for(2, vec![vec![0, 1]]);
        assert_eq!(ops.hgnn.to_dense().to_rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::identity(1)).unwrap();
        let layer = HgnnLayer {
            weight: w,
            activation: Activation::Identity,
            f_in: 1,
            f_out: 1,
        };
        let mut g = Graph::new();
        let x = g.constant(Tensor::column(vec![1.0, 0.0])).unwrap();
        let y = hgnn_forward(&mut g, &store, &layer, &ops, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_input_and_isolated_rows() {
        let ops = ops_for(3, vec![vec![0, 1]]);
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(0);
        let layer = HgnnLayer::new(&mut store, "h", 2, 3, Activation::Relu, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(3, 2)).unwrap();
        let y = hgnn_forward(&mut g, &store, &layer, &ops, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let x = g.constant(Tensor::filled(3, 2, 5.0)).unwrap();
        let id = HgnnLayer {
            activation: Activation::Identity,
            ..layer.clone()
        };
        let y = hgnn_forward(&mut g, &store, &id, &ops, x).unwrap();
        assert_eq!(g.value(y).row_slice(2), &[0.0; 3]);
        let wide = g.constant(Tensor::zeros(3, 3)).unwrap();
        assert!(hgnn_forward(&mut g, &store, &id, &ops, wide).is_err());
    }

    #[test]
    fn unweighted_operator_is_symmetric() {
        let ops = ops_for(5, vec![vec![0, 1, 2], vec![2, 3], vec![3, 4, 0]]);
        assert!(ops.hgnn.is_symmetric(1e-15));
    }

    #[test]
    fn zero_head_outputs_one_half() {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(0);
        let head = MlpHead::new(&mut store, "head", 4, 8, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut g = Graph::new();
        let h = g.constant(Tensor::filled(3, 4, 2.0)).unwrap();
        let w = edge_weight_head(&mut g, &store, &head, h).unwrap();
        assert_eq!(g.value(w).data(), &[0.5; 3]);
        let bad = g.constant(Tensor::zeros(3, 5)).unwrap();
        assert!(edge_weight_head(&mut g, &store, &head, bad).is_err());
    }

    #[test]
    fn head_outputs_lie_in_unit_interval() {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(3);
        let head = MlpHead::new(&mut store, "head", 4, 8, &mut rng).unwrap();
        let mut g = Graph::new();
        let h = g.constant(init_uniform(6, 4, 1, &mut rng)).unwrap();
        let h = g.scale(h, 50.0).unwrap();
        let w = edge_weight_head(&mut g, &store, &head, h).unwrap();
        assert!(g.value(w).data().iter().all(|&x| x > 0.0 && x < 1.0));
    }
}
