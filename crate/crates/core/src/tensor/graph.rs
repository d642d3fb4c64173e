use std::sync::Arc;

use crate::error::{Error, Result};

use super::params::{Gradients, ParamId, ParamStore};
use super::sparse::CsrMatrix;
use super::{matmul_into, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    BroadcastRows(Var),
    Exp(Var),
    Softplus(Var),
    Sigmoid(Var),
    Relu(Var),
    Expm1Ratio(Var),
    Concat(Vec<Var>, usize),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    RowOuter(Var, Var),
    RowContract(Var, Var),
    ScaleRows(Var, Var),
    Bce {
        scores: Var,
        labels: Vec<f64>,
        weights: Vec<f64>,
    },
    SumSquares(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::SpMM(..) => "spmm",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::Exp(..) => "exp",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Expm1Ratio(..) => "expm1_ratio",
            Op::Concat(..) => "concat",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::RowOuter(..) => "row_outer",
            Op::RowContract(..) => "row_contract",
            Op::ScaleRows(..) => "scale_rows",
            Op::Bce { .. } => "bce",
            Op::SumSquares(..) => "sum_squares",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Probability clamp used inside the cross-entropy logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Below this magnitude `(eᶻ − 1)/z` is taken as its limit 1.
pub const EXPM1_RATIO_CUTOFF: f64 = 1e-8;

/// `(eᶻ − 1)/z` with the removable singularity filled in. Away from zero
/// `eᶻ − 1` loses at most a few ulps, and `exp` is about twice as fast.
pub fn expm1_ratio(z: f64) -> f64 {
    let m = z.abs();
    if m < EXPM1_RATIO_CUTOFF {
        1.0
    } else if m < 0.5 {
        z.exp_m1() / z
    } else {
        (z.exp() - 1.0) / z
    }
}

/// `φ'(z)` given `φ = φ(z)`, using `eᶻ = 1 + zφ`.
fn expm1_ratio_derivative(z: f64, phi: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0
    } else {
        (1.0 - phi) / z + phi
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Records forward operations for one differentiation pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Smallest `|x|` over every ReLU input on the tape; infinite without ReLUs.
    pub fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(&self.nodes[x.0].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter())
            .fold(f64::INFINITY, |m, x| m.min(x.abs()))
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value (shape {:?})",
                op.name(),
                value.shape()
            )));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(op, value)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Constant, value)
    }

    /// The leaf for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(Some(v)) = self.param_vars.get(id.index()) {
            return Ok(*v);
        }
        let value = store.value(id).clone();
        let v = self.push(Op::Param(id), value)?;
        if self.param_vars.len() <= id.index() {
            self.param_vars.resize(id.index() + 1, None);
        }
        self.param_vars[id.index()] = Some(v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, k) = ta.dims2()?;
        let (k2, c) = tb.dims2()?;
        if k != k2 {
            return Err(Error::Contract(format!(
                "matmul: shapes {:?} and {:?} are incompatible",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; r * c];
        matmul_into(ta.data(), tb.data(), &mut out, r, k, c);
        self.push(Op::MatMul(a, b), Tensor::matrix(r, c, out)?)
    }

    pub fn spmm(&mut self, s: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2()?;
        if s.cols() != r {
            return Err(Error::Contract(format!(
                "spmm: sparse {}×{} times dense {:?}",
                s.rows(),
                s.cols(),
                tx.shape()
            )));
        }
        let out = s.spmm(tx.data(), c);
        self.push(Op::SpMM(Arc::clone(s), x), Tensor::matrix(s.rows(), c, out)?)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Sub(a, b), value)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, s), |x| s * x)
    }

    /// `a + c` elementwise.
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Shift(a), |x| x + c)
    }

    /// Repeats a `1 × c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = ta.dims2()?;
        if r != 1 {
            return Err(Error::Contract(format!(
                "broadcast_rows expects a single row, got {:?}",
                ta.shape()
            )));
        }
        let data = ta.data().repeat(rows);
        self.push(Op::BroadcastRows(a), Tensor::matrix(rows, c, data)?)
    }

    /// `a + 1·bias` for a `1 × c` bias row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let rows = self.value(a).dims2()?.0;
        let b = self.broadcast_rows(bias, rows)?;
        self.add(a, b)
    }

    /// `a ∘ 1·row` for a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let rows = self.value(a).dims2()?.0;
        let b = self.broadcast_rows(row, rows)?;
        self.mul(a, b)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Elementwise `(eᶻ − 1)/z`, the ZOH input-gain factor.
    pub fn expm1_ratio(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Expm1Ratio(a), expm1_ratio)
    }

    /// Concatenation along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).dims2())
            .collect::<Result<_>>()?;
        let value = match axis {
            0 => {
                let c = dims[0].1;
                if dims.iter().any(|d| d.1 != c) {
                    return Err(Error::Contract(format!("concat rows: column counts {dims:?}")));
                }
                let mut data = Vec::new();
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(dims.iter().map(|d| d.0).sum(), c, data)?
            }
            1 => {
                let r = dims[0].0;
                if dims.iter().any(|d| d.0 != r) {
                    return Err(Error::Contract(format!("concat columns: row counts {dims:?}")));
                }
                let total: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r * total);
                for i in 0..r {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                Tensor::matrix(r, total, data)?
            }
            _ => return Err(Error::Contract(format!("concat axis {axis} out of range"))),
        };
        self.push(Op::Concat(parts.to_vec(), axis), value)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    /// Axis 0 sums columns into a `1 × c` row; axis 1 sums rows into `r × 1`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        let value = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, &x) in out.iter_mut().zip(t.row_slice(i)) {
                        *o += x;
                    }
                }
                Tensor::matrix(1, c, out)?
            }
            1 => Tensor::matrix(r, 1, (0..r).map(|i| t.row_slice(i).iter().sum()).collect())?,
            _ => return Err(Error::Contract(format!("sum axis {axis} out of range"))),
        };
        self.push(Op::SumAxis(a, axis), value)
    }

    /// Per-row outer product: `out[i, j·q + k] = a[i, j] · b[i, k]`.
    pub fn row_outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, p) = ta.dims2()?;
        let (r2, q) = tb.dims2()?;
        if r != r2 {
            return Err(Error::Contract(format!(
                "row_outer: shapes {:?} and {:?} differ in rows",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = Vec::with_capacity(r * p * q);
        for i in 0..r {
            let brow = tb.row_slice(i);
            for &x in ta.row_slice(i) {
                out.extend(brow.iter().map(|&y| x * y));
            }
        }
        self.push(Op::RowOuter(a, b), Tensor::matrix(r, p * q, out)?)
    }

    /// Per-row contraction: `out[i, j] = Σ_k a[i, j·q + k] · b[i, k]`.
    pub fn row_contract(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, pq) = ta.dims2()?;
        let (r2, q) = tb.dims2()?;
        if r != r2 || q == 0 || pq % q != 0 {
            return Err(Error::Contract(format!(
                "row_contract: shapes {:?} and {:?} are incompatible",
                ta.shape(),
                tb.shape()
            )));
        }
        let p = pq / q;
        let mut out = Vec::with_capacity(r * p);
        for i in 0..r {
            let arow = ta.row_slice(i);
            let brow = tb.row_slice(i);
            for j in 0..p {
                out.push(arow[j * q..(j + 1) * q].iter().zip(brow).map(|(x, y)| x * y).sum());
            }
        }
        self.push(Op::RowContract(a, b), Tensor::matrix(r, p, out)?)
    }

    /// Multiplies row `i` of `a` by `w[i]` for an `r × 1` column `w`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ta, tw) = (self.value(a), self.value(w));
        let (r, c) = ta.dims2()?;
        if tw.dims2()? != (r, 1) {
            return Err(Error::Contract(format!(
                "scale_rows: {:?} by {:?}",
                ta.shape(),
                tw.shape()
            )));
        }
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let wi = tw.data()[i];
            out.extend(ta.row_slice(i).iter().map(|&x| x * wi));
        }
        self.push(Op::ScaleRows(a, w), Tensor::matrix(r, c, out)?)
    }

    /// `Σ_i weights[i] · CE(scores[i], labels[i])` with scores clamped to
    /// `[BCE_EPS, 1 − BCE_EPS]`.
    pub fn weighted_bce(&mut self, scores: Var, labels: &[f64], weights: &[f64]) -> Result<Var> {
        let ts = self.value(scores);
        if ts.numel() != labels.len() || labels.len() != weights.len() {
            return Err(Error::Contract(format!(
                "weighted_bce: {} scores, {} labels, {} weights",
                ts.numel(),
                labels.len(),
                weights.len()
            )));
        }
        let loss = ts
            .data()
            .iter()
            .zip(labels)
            .zip(weights)
            .map(|((&p, &z), &w)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -w * (z * p.ln() + (1.0 - z) * (1.0 - p).ln())
            })
            .sum();
        self.push(
            Op::Bce {
                scores,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            Tensor::scalar(loss),
        )
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).squared_norm();
        self.push(Op::SumSquares(a), Tensor::scalar(s))
    }

    /// Reverse pass from a scalar `loss`. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::with_len(self.param_vars.len());

        fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'g mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()])
        }

        fn give(grads: &mut [Option<Vec<f64>>], v: Var, data: Vec<f64>) {
            match &mut grads[v.0] {
                Some(d) => add_into(d, &data),
                empty => *empty = Some(data),
            }
        }

        fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            let y = node.value.data();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, Tensor::new(node.value.shape().to_vec(), g)?),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (r, k) = ta.dims2()?;
                    let c = tb.dims2()?.1;
                    let bt = tb.transpose()?;
                    let mut da = vec![0.0; r * k];
                    matmul_into(&g, bt.data(), &mut da, r, c, k);
                    let mut db = vec![0.0; k * c];
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for (p, &aip) in ta.row_slice(i).iter().enumerate() {
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[p * c..(p + 1) * c].iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                    give(&mut grads, *a, da);
                    give(&mut grads, *b, db);
                }
                Op::SpMM(s, x) => {
                    let width = nodes[x.0].value.dims2()?.1;
                    s.spmm_transpose_into(&g, width, slot(&mut grads, &nodes, *x));
                }
                Op::Add(a, b) => {
                    give(&mut grads, *a, g.clone());
                    give(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    give(&mut grads, *b, g.iter().map(|x| -x).collect());
                    give(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    give(&mut grads, *a, zip_map(&g, nodes[b.0].value.data(), |x, y| x * y));
                    give(&mut grads, *b, zip_map(&g, nodes[a.0].value.data(), |x, y| x * y));
                }
                Op::Scale(a, s) => give(&mut grads, *a, g.iter().map(|x| s * x).collect()),
                Op::Shift(a) => give(&mut grads, *a, g),
                Op::BroadcastRows(a) => {
                    let c = nodes[a.0].value.numel();
                    let d = slot(&mut grads, &nodes, *a);
                    for row in g.chunks(c.max(1)) {
                        add_into(d, row);
                    }
                }
                Op::Exp(a) => give(&mut grads, *a, zip_map(&g, y, |gv, yv| gv * yv)),
                Op::Softplus(a) => give(&mut grads, *a, zip_map(&g, nodes[a.0].value.data(), |gv, xv| gv * sigmoid(xv))),
                Op::Sigmoid(a) => give(&mut grads, *a, zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv))),
                Op::Relu(a) => give(
                    &mut grads,
                    *a,
                    zip_map(&g, nodes[a.0].value.data(), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                ),
                Op::Expm1Ratio(a) => {
                    let x = nodes[a.0].value.data();
                    let d = g
                        .iter()
                        .zip(x)
                        .zip(y)
                        .map(|((&gv, &xv), &yv)| gv * expm1_ratio_derivative(xv, yv))
                        .collect();
                    give(&mut grads, *a, d);
                }
                Op::Concat(parts, axis) => {
                    let (_, total) = node.value.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = nodes[p.0].value.dims2()?;
                        let d = slot(&mut grads, &nodes, p);
                        if *axis == 0 {
                            add_into(d, &g[offset..offset + pr * pc]);
                            offset += pr * pc;
                        } else {
                            for i in 0..pr {
                                add_into(&mut d[i * pc..(i + 1) * pc], &g[i * total + offset..i * total + offset + pc]);
                            }
                            offset += pc;
                        }
                    }
                }
                Op::Sum(a) => {
                    for d in slot(&mut grads, &nodes, *a).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Mean(a) => {
                    let scale = g[0] / nodes[a.0].value.numel() as f64;
                    for d in slot(&mut grads, &nodes, *a).iter_mut() {
                        *d += scale;
                    }
                }
                Op::SumAxis(a, axis) => {
                    let (_, c) = nodes[a.0].value.dims2()?;
                    let d = slot(&mut grads, &nodes, *a);
                    for (k, dv) in d.iter_mut().enumerate() {
                        *dv += if *axis == 0 { g[k % c] } else { g[k / c] };
                    }
                }
                Op::RowOuter(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (r, p) = ta.dims2()?;
                    let q = tb.dims2()?.1;
                    let mut da = vec![0.0; r * p];
                    let mut db = vec![0.0; r * q];
                    for i in 0..r {
                        let arow = ta.row_slice(i);
                        let brow = tb.row_slice(i);
                        let dbrow = &mut db[i * q..(i + 1) * q];
                        for j in 0..p {
                            let gblock = &g[i * p * q + j * q..i * p * q + (j + 1) * q];
                            da[i * p + j] = dot(gblock, brow);
                            for (d, gv) in dbrow.iter_mut().zip(gblock) {
                                *d += gv * arow[j];
                            }
                        }
                    }
                    give(&mut grads, *a, da);
                    give(&mut grads, *b, db);
                }
                Op::RowContract(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (r, pq) = ta.dims2()?;
                    let q = tb.dims2()?.1;
                    let p = pq / q;
                    let mut da = vec![0.0; r * pq];
                    let mut db = vec![0.0; r * q];
                    for i in 0..r {
                        let arow = ta.row_slice(i);
                        let brow = tb.row_slice(i);
                        let dbrow = &mut db[i * q..(i + 1) * q];
                        for j in 0..p {
                            let gij = g[i * p + j];
                            let ablock = &arow[j * q..(j + 1) * q];
                            for ((dav, dbv), (&bv, &av)) in da[i * pq + j * q..i * pq + (j + 1) * q]
                                .iter_mut()
                                .zip(dbrow.iter_mut())
                                .zip(brow.iter().zip(ablock))
                            {
                                *dav = gij * bv;
                                *dbv += gij * av;
                            }
                        }
                    }
                    give(&mut grads, *a, da);
                    give(&mut grads, *b, db);
                }
                Op::ScaleRows(a, w) => {
                    let (ta, tw) = (&nodes[a.0].value, &nodes[w.0].value);
                    let (r, c) = ta.dims2()?;
                    let mut da = vec![0.0; r * c];
                    let mut dw = vec![0.0; r];
                    for i in 0..r {
                        let wi = tw.data()[i];
                        let grow = &g[i * c..(i + 1) * c];
                        for (d, gv) in da[i * c..(i + 1) * c].iter_mut().zip(grow) {
                            *d = gv * wi;
                        }
                        dw[i] = dot(grow, ta.row_slice(i));
                    }
                    give(&mut grads, *a, da);
                    give(&mut grads, *w, dw);
                }
                Op::Bce {
                    scores,
                    labels,
                    weights,
                } => {
                    let p = nodes[scores.0].value.data();
                    let d = slot(&mut grads, &nodes, *scores);
                    for i in 0..p.len() {
                        if p[i] <= BCE_EPS || p[i] >= 1.0 - BCE_EPS {
                            continue;
                        }
                        let z = labels[i];
                        d[i] += g[0] * weights[i] * (-z / p[i] + (1.0 - z) / (1.0 - p[i]));
                    }
                }
                Op::SumSquares(a) => give(
                    &mut grads,
                    *a,
                    nodes[a.0].value.data().iter().map(|&xv| 2.0 * g[0] * xv).collect(),
                ),
            }
        }
        Ok(out)
    }

    /// Runs [`Graph::backward`] and adds the result to the store's accumulators.
    pub fn backward_into(self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        store.accumulate(&grads)
    }
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
