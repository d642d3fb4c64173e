//! Detection metrics, the Jordan-center baseline and report emission.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::PairwiseGraph;

pub const REPORT_FORMAT: &str = "sdm-report-v1";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub balanced_acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub auc: f64,
}

/// `0/0` counts as 0.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(scores: &[f64], labels: &[f64]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Contract(format!("non-finite score {s}")));
    }
    let positives = labels.iter().filter(|&&l| l == 1.0).count();
    if positives + labels.iter().filter(|&&l| l == 0.0).count() != labels.len() {
        return Err(Error::Contract("labels must be 0 or 1".into()));
    }
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Contract(format!(
            "labels need both classes, got {positives} positive and {negatives} negative"
        )));
    }
    Ok((positives, negatives))
}

/// Nodes whose score reaches `threshold`.
pub fn predicted_sources(scores: &[f64], threshold: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Area under the ROC curve from the Mann-Whitney rank statistic, with tied
/// scores given their average rank.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count() as f64;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

pub fn metrics(scores: &[f64], labels: &[f64], threshold: f64) -> Result<Metrics> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let (mut tp, mut tn) = (0, 0);
    let mut predicted = 0;
    for (&s, &l) in scores.iter().zip(labels) {
        let hit = s >= threshold;
        predicted += hit as usize;
        match (hit, l == 1.0) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            _ => {}
        }
    }
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, pos);
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        acc: ratio(tp + tn, scores.len()),
        balanced_acc: 0.5 * (recall + ratio(tn, neg)),
        precision,
        recall,
        f_score,
        auc: auc(scores, labels)?,
    })
}

/// Metrics at each threshold in turn.
pub fn threshold_sweep(scores: &[f64], labels: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, Metrics)>> {
    thresholds
        .iter()
        .map(|&t| Ok((t, metrics(scores, labels, t)?)))
        .collect()
}

/// `0.1, 0.2, …, 0.9`.
pub fn default_sweep_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn bfs_distances(graph: &PairwiseGraph, informed: &[bool], start: usize, dist: &mut [usize]) -> Vec<usize> {
    dist.iter_mut().for_each(|d| *d = usize::MAX);
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut reached = Vec::new();
    while let Some(u) = queue.pop_front() {
        reached.push(u);
        for &v in graph.neighbors(u) {
            if informed[v] && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    reached
}

/// `1 / (1 + eccentricity)` within each informed component of `graph`;
/// uninformed nodes score 0.
pub fn jordan_center_baseline(graph: &PairwiseGraph, informed: &[bool]) -> Result<Vec<f64>> {
    let n = graph.node_count();
    if informed.len() != n {
        return Err(Error::Contract(format!("informed mask has {} entries for {n} nodes", informed.len())));
    }
    let mut scores = vec![0.0; n];
    let mut dist = vec![usize::MAX; n];
    for v in (0..n).filter(|&v| informed[v]) {
        let reached = bfs_distances(graph, informed, v, &mut dist);
        let ecc = reached.iter().map(|&u| dist[u]).max().unwrap_or(0);
        scores[v] = 1.0 / (1.0 + ecc as f64);
    }
    Ok(scores)
}

/// One method on one cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: String,
    pub cascade: usize,
    pub scores: Vec<f64>,
    pub predicted: Vec<usize>,
    pub metrics: Metrics,
    pub runtime_s: f64,
}

impl DetectionReport {
    pub fn new(method: &str, cascade: usize, scores: Vec<f64>, labels: &[f64], threshold: f64, runtime_s: f64) -> Result<Self> {
        let metrics = metrics(&scores, labels, threshold)?;
        Ok(Self {
            method: method.to_string(),
            cascade,
            predicted: predicted_sources(&scores, threshold),
            scores,
            metrics,
            runtime_s,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and sample standard deviation (0 for fewer than two values).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub count: usize,
    pub acc: Summary,
    pub balanced_acc: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f_score: Summary,
    pub auc: Summary,
    pub runtime_s: f64,
}

pub fn aggregate(method: &str, reports: &[DetectionReport]) -> Aggregate {
    let pick = |f: fn(&Metrics) -> f64| Summary::of(&reports.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
    Aggregate {
        method: method.to_string(),
        count: reports.len(),
        acc: pick(|m| m.acc),
        balanced_acc: pick(|m| m.balanced_acc),
        precision: pick(|m| m.precision),
        recall: pick(|m| m.recall),
        f_score: pick(|m| m.f_score),
        auc: pick(|m| m.auc),
        runtime_s: reports.iter().map(|r| r.runtime_s).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub format: String,
    pub config_fingerprint: String,
    pub threshold: f64,
    pub aggregates: Vec<Aggregate>,
}

impl ReportFile {
    pub fn new(config_fingerprint: &str, threshold: f64, aggregates: Vec<Aggregate>) -> Self {
        Self {
            format: REPORT_FORMAT.to_string(),
            config_fingerprint: config_fingerprint.to_string(),
            threshold,
            aggregates,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("serializing report", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::json("parsing report", e))?;
        if r.format != REPORT_FORMAT {
            return Err(Error::Data(format!("expected report format {REPORT_FORMAT}, found {:?}", r.format)));
        }
        Ok(r)
    }
}

/// One row per report.
pub fn reports_csv(reports: &[DetectionReport]) -> String {
    let mut out = String::from("method,cascade,acc,balanced_acc,precision,recall,f_score,auc,predicted,runtime_s\n");
    for r in reports {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method, r.cascade, m.acc, m.balanced_acc, m.precision, m.recall, m.f_score, m.auc, r.predicted.len(), r.runtime_s
        );
    }
    out
}

/// Long-format rows `threshold,method,f_score,precision,recall`.
pub fn threshold_sweep_csv(method: &str, rows: &[(f64, Metrics)]) -> String {
    let mut out = String::from("threshold,method,f_score,precision,recall\n");
    for (t, m) in rows {
        let _ = writeln!(out, "{t},{method},{},{},{}", m.f_score, m.precision, m.recall);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_arithmetic_fixture() {
        let scores = [0.1, 0.9, 0.9, 0.9, 0.1];
        let labels = [0.0, 0.0, 1.0, 1.0, 1.0];
        let m = metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(m.precision, 2.0 / 3.0);
        assert_eq!(m.recall, 2.0 / 3.0);
        assert!((m.f_score - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(predicted_sources(&scores, 0.5), vec![1, 2, 3]);
    }

    #[test]
    fn auc_fixtures() {
        assert_eq!(auc(&[0.9, 0.8, 0.3], &[1.0, 0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.2, 0.8], &[1.0, 0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        let m = metrics(&[0.9, 0.2, 0.8], &[1.0, 0.0, 1.0], 0.5).unwrap();
        assert_eq!(m.f_score, 1.0);
        assert_eq!(m.acc, 1.0);
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        assert!(metrics(&[0.1, 0.2], &[0.0, 0.0], 0.5).is_err());
        assert!(metrics(&[0.1, 0.2], &[1.0, 1.0], 0.5).is_err());
        assert!(metrics(&[0.1], &[1.0, 0.0], 0.5).is_err());
        assert!(metrics(&[0.1, 0.2], &[0.5, 0.0], 0.5).is_err());
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let m = metrics(&[0.1, 0.2], &[1.0, 0.0], 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f_score), (0.0, 0.0, 0.0));
        assert_eq!(m.balanced_acc, 0.5);
    }

    fn path(n: usize) -> PairwiseGraph {
        let pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        PairwiseGraph::from_edges(n, &pairs).unwrap()
    }

    #[test]
    fn jordan_center_of_path_and_star() {
        let s = jordan_center_baseline(&path(5), &[true; 5]).unwrap();
        assert_eq!(s, vec![0.2, 0.25, 1.0 / 3.0, 0.25, 0.2]);
        let star = PairwiseGraph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let s = jordan_center_baseline(&star, &[true; 5]).unwrap();
        assert_eq!(s[0], 0.5);
        assert!(s[1..].iter().all(|&x| x == 1.0 / 3.0));
    }

    #[test]
    fn jordan_center_per_component() {
        // informed 0-1-2 and 4-5-6 split by uninformed 3
        let informed = [true, true, true, false, true, true, true];
        let s = jordan_center_baseline(&path(7), &informed).unwrap();
        assert_eq!(s[3], 0.0);
        assert_eq!(s[1], 0.5);
        assert_eq!(s[5], 0.5);
        assert_eq!(s[0], 1.0 / 3.0);
        assert!(jordan_center_baseline(&path(3), &[true]).is_err());
    }

    #[test]
    fn summary_uses_sample_deviation() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn report_json_round_trip() {
        let r = DetectionReport::new("m", 0, vec![0.9, 0.1], &[1.0, 0.0], 0.5, 0.0).unwrap();
        let file = ReportFile::new("abc", 0.5, vec![aggregate("m", &[r.clone()])]);
        let back = ReportFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        assert!(reports_csv(&[r]).lines().nth(1).unwrap().starts_with("m,0,1,1,1,1,1,1,1,"));
        assert!(ReportFile::from_json(&file.to_json().unwrap().replace(REPORT_FORMAT, "x")).is_err());
    }
}
