//! Per-snapshot node features: informed state, normalized infection time and
//! Laplacian positional encodings of the informed sub-hypergraph.

use crate::diffusion::SnapshotSeries;
use crate::error::{Error, Result};
use crate::hypergraph::{pinv, Hypergraph};
use crate::linalg::{symmetric_eigen, SquareMatrix, SymmetricEigen};
use crate::tensor::Tensor;

pub const DEFAULT_PE_WIDTH: usize = 8;

/// Eigenvalues at or below this are treated as zero.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-8;

/// Number of feature columns for PE width `k`.
pub fn feature_width(k: usize) -> usize {
    2 + k
}

/// +1 for nodes that have informed the rumor, −1 otherwise.
pub fn state_feature(series: &SnapshotSeries, capture: usize) -> Vec<f64> {
    series.states[capture]
        .iter()
        .map(|s| if s.has_informed() { 1.0 } else { -1.0 })
        .collect()
}

/// Infection step divided by the capture step for informed nodes, −1 otherwise.
pub fn time_feature(series: &SnapshotSeries, capture: usize) -> Result<Vec<f64>> {
    let t_capture = series.times[capture];
    series.states[capture]
        .iter()
        .enumerate()
        .map(|(v, s)| {
            if !s.has_informed() {
                return Ok(-1.0);
            }
            let t = series.cascade.infection_time[v].ok_or_else(|| {
                Error::Data(format!("informed node {v} has no infection time"))
            })?;
            Ok(if t_capture == 0 {
                0.0
            } else {
                t as f64 / t_capture as f64
            })
        })
        .collect()
}

/// Symmetric normalized Laplacian of the informed sub-hypergraph and its
/// eigendecomposition.
#[derive(Debug, Clone)]
pub struct InfectedLaplacian {
    /// Global ids of the informed nodes; local index `i` is `nodes[i]`.
    pub nodes: Vec<usize>,
    pub laplacian: SquareMatrix,
    pub eigen: SymmetricEigen,
}

/// Restricts the incidence to informed nodes and to hyperedges holding at
/// least one of them, with hyperedge degrees counted inside the restriction,
/// then forms `I − D_V^{-1/2} H D_E^{-1} Hᵀ D_V^{-1/2}`.
pub fn infected_laplacian(hg: &Hypergraph, informed: &[bool]) -> Result<InfectedLaplacian> {
    if informed.len() != hg.node_count() {
        return Err(Error::Contract(format!(
            "informed mask of length {} for {} nodes",
            informed.len(),
            hg.node_count()
        )));
    }
    let nodes: Vec<usize> = (0..informed.len()).filter(|&v| informed[v]).collect();
    if nodes.is_empty() {
        return Err(Error::Contract("infected subgraph is empty".into()));
    }
    let mut local = vec![usize::MAX; informed.len()];
    for (i, &v) in nodes.iter().enumerate() {
        local[v] = i;
    }
    let k = nodes.len();
    let mut adjacency = SquareMatrix::zeros(k);
    let mut degree = vec![0.0; k];
    for edge in hg.edges() {
        let members: Vec<usize> = edge.iter().filter(|&&v| informed[v]).map(|&v| local[v]).collect();
        if members.is_empty() {
            continue;
        }
        let inv_de = 1.0 / members.len() as f64;
        for &a in &members {
            degree[a] += 1.0;
            for &b in &members {
                adjacency.set(a, b, adjacency.get(a, b) + inv_de);
            }
        }
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| pinv(d).sqrt()).collect();
    let mut laplacian = SquareMatrix::identity(k);
    for a in 0..k {
        for b in 0..k {
            let v = adjacency.get(a, b) * inv_sqrt[a] * inv_sqrt[b];
            if v != 0.0 {
                laplacian.set(a, b, laplacian.get(a, b) - v);
            }
        }
    }
    let eigen = symmetric_eigen(&laplacian)?;
    Ok(InfectedLaplacian {
        nodes,
        laplacian,
        eigen,
    })
}

/// Flips `v` so that its largest-magnitude entry (lowest index on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let m = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if let Some(&lead) = v.iter().find(|x| x.abs() >= m - 1e-10) {
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// `n × k` positional encodings: informed rows take the eigenvectors of the
/// `k` smallest non-zero eigenvalues (zero-padded when fewer exist);
/// uninformed rows are all −1.
pub fn positional_feature(lap: &InfectedLaplacian, k: usize, n: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::Contract("positional encoding width must be at least 1".into()));
    }
    let mut out = Tensor::filled(n, k, -1.0);
    for &v in &lap.nodes {
        if v >= n {
            return Err(Error::Contract(format!("informed node {v} outside n = {n}")));
        }
        out.data_mut()[v * k..(v + 1) * k].iter_mut().for_each(|x| *x = 0.0);
    }
    let chosen: Vec<usize> = (0..lap.eigen.values.len())
        .filter(|&j| lap.eigen.values[j] > ZERO_EIGENVALUE_TOL)
        .take(k)
        .collect();
    for (col, &j) in chosen.iter().enumerate() {
        let mut vec = lap.eigen.vector(j);
        fix_sign(&mut vec);
        for (i, &v) in lap.nodes.iter().enumerate() {
            out.data_mut()[v * k + col] = vec[i];
        }
    }
    Ok(out)
}

/// Feature matrix `[state | time | PE]` of one capture.
pub fn snapshot_features(hg: &Hypergraph, series: &SnapshotSeries, capture: usize, k: usize) -> Result<Tensor> {
    let n = hg.node_count();
    if series.node_count() != n {
        return Err(Error::Contract(format!(
            "snapshot series over {} nodes for a hypergraph of {n}",
            series.node_count()
        )));
    }
    let state = state_feature(series, capture);
    let time = time_feature(series, capture)?;
    let informed = series.informed_mask(capture);
    let pe = if informed.iter().any(|&b| b) {
        positional_feature(&infected_laplacian(hg, &informed)?, k, n)?
    } else {
        Tensor::filled(n, k, -1.0)
    };
    let width = feature_width(k);
    let mut data = Vec::with_capacity(n * width);
    for v in 0..n {
        data.push(state[v]);
        data.push(time[v]);
        data.extend_from_slice(pe.row_slice(v));
    }
    Tensor::matrix(n, width, data)
}

/// One feature matrix per capture, in capture order.
pub fn assemble_features(hg: &Hypergraph, series: &SnapshotSeries, k: usize) -> Result<Vec<Tensor>> {
    (0..series.len())
        .map(|i| snapshot_features(hg, series, i, k))
        .collect()
}

/// CSV dump with a header row; one row per node and capture.
pub fn features_csv(features: &[Tensor], k: usize) -> String {
    let mut out = String::from("capture,node,state,time");
    for j in 1..=k {
        out.push_str(&format!(",pe_{j}"));
    }
    out.push('\n');
    for (c, f) in features.iter().enumerate() {
        for v in 0..f.rows() {
            out.push_str(&format!("{c},{v}"));
            for x in f.row_slice(v) {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Cascade, CascadeConfig, NodeState};

    fn series(states: Vec<NodeState>, times: Vec<Option<u32>>, capture: u32) -> SnapshotSeries {
        SnapshotSeries {
            times: vec![capture],
            states: vec![states],
            cascade: Cascade {
                sources: vec![0],
                infection_time: times,
                node_rates: vec![0.1; 3],
            },
            config: CascadeConfig::default(),
        }
    }

    use NodeState::{Informed as I, Uninformed as U};

    #[test]
    fn state_examples() {
        let s = series(vec![I, U, I], vec![Some(0), None, Some(2)], 4);
        assert_eq!(state_feature(&s, 0), vec![1.0, -1.0, 1.0]);
        let s = series(vec![U, U, U], vec![None; 3], 4);
        assert_eq!(state_feature(&s, 0), vec![-1.0; 3]);
        let s = series(vec![I, I, I], vec![Some(0), Some(1), Some(1)], 4);
        assert_eq!(state_feature(&s, 0), vec![1.0; 3]);
    }

    #[test]
    fn time_examples() {
        let s = series(vec![I, U, I], vec![Some(0), None, Some(2)], 4);
        assert_eq!(time_feature(&s, 0).unwrap(), vec![0.0, -1.0, 0.5]);
        let broken = series(vec![I, I, U], vec![Some(0), None, None], 4);
        assert!(matches!(time_feature(&broken, 0), Err(Error::Data(_))));
    }

    #[test]
    fn two_node_single_edge_laplacian() {
        let hg = Hypergraph::new(3, vec![vec![0, 1], vec![1, 2]]).unwrap();
        let lap = infected_laplacian(&hg, &[true, true, false]).unwrap();
        // Edge {1,2} restricts to {1}: node 1 has degree 2, so this is not the
        // isolated 2-node case; use a dedicated graph for that below.
        assert_eq!(lap.nodes, vec![0, 1]);

        let hg = Hypergraph::new(2, vec![vec![0, 1]]).unwrap();
        let lap = infected_laplacian(&hg, &[true, true]).unwrap();
        assert_eq!(lap.laplacian.to_rows(), vec![vec![0.5, -0.5], vec![-0.5, 0.5]]);
        assert!(lap.eigen.values[0].abs() < 1e-12);
        assert!((lap.eigen.values[1] - 1.0).abs() < 1e-12);

        let pe = positional_feature(&lap, 1, 2).unwrap();
        let r = 0.5f64.sqrt();
        assert!((pe.get(0, 0) - r).abs() < 1e-12);
        assert!((pe.get(1, 0) + r).abs() < 1e-12);
    }

    #[test]
    fn isolated_informed_node_gives_identity() {
        let hg = Hypergraph::new(3, vec![vec![1, 2]]).unwrap();
        let lap = infected_laplacian(&hg, &[true, false, false]).unwrap();
        assert_eq!(lap.laplacian.to_rows(), vec![vec![1.0]]);
    }

    #[test]
    fn disconnected_informed_set_pads_with_zeros() {
        // Each informed node is alone in its restricted edge: L = 0.
        let hg = Hypergraph::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let lap = infected_laplacian(&hg, &[true, false, true, false]).unwrap();
        assert!(lap.eigen.values.iter().all(|v| v.abs() < 1e-12));
        let pe = positional_feature(&lap, 3, 4).unwrap();
        assert_eq!(pe.row_slice(0), &[0.0; 3]);
        assert_eq!(pe.row_slice(1), &[-1.0; 3]);
        assert_eq!(pe.row_slice(2), &[0.0; 3]);
    }

    #[test]
    fn empty_infected_set_is_rejected() {
        let hg = Hypergraph::new(2, vec![vec![0, 1]]).unwrap();
        assert!(infected_laplacian(&hg, &[false, false]).is_err());
    }

    #[test]
    fn sign_convention() {
        let mut v = vec![0.1, -0.9, 0.3];
        fix_sign(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
        let mut tie = vec![-0.5, 0.5];
        fix_sign(&mut tie);
        assert_eq!(tie, vec![0.5, -0.5]);
    }

    #[test]
    fn assembled_rows() {
        let hg = Hypergraph::new(3, vec![vec![0, 1], vec![1, 2]]).unwrap();
        let mut s = series(vec![I, I, U], vec![Some(0), Some(2), None], 4);
        s.times = vec![2, 4];
        s.states.push(vec![I, I, I]);
        s.cascade.infection_time[2] = Some(3);
        let feats = assemble_features(&hg, &s, 2).unwrap();
        assert_eq!(feats.len(), 2);
        assert!(feats.iter().all(|f| f.shape() == [3, 4]));
        assert_eq!(feats[0].row_slice(2), &[-1.0, -1.0, -1.0, -1.0]);
        assert_eq!(&feats[0].row_slice(1)[..2], &[1.0, 1.0]);
        assert_eq!(&feats[1].row_slice(2)[..2], &[1.0, 0.75]);
        let csv = features_csv(&feats, 2);
        assert!(csv.starts_with("capture,node,state,time,pe_1,pe_2\n"));
        assert_eq!(csv.lines().count(), 7);
    }
}
