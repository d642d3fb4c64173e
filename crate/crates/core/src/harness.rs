//! Batch commands: generate datasets, train, evaluate and sweep, with
//! layered configuration and write-once artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::{run_until_coverage, CascadeConfig, SnapshotSeries};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, default_sweep_thresholds, jordan_center_baseline, reports_csv, threshold_sweep, threshold_sweep_csv,
    Aggregate, DetectionReport, Metrics, ReportFile, DEFAULT_THRESHOLD,
};
use crate::hypergraph::{build_incidence, clique_expand, generate_synthetic, load_hypergraph, Hypergraph};
use crate::layers::GraphOperators;
use crate::model::{ModelConfig, SourceDetModel};
use crate::rng::{derive_seed, fingerprint};
use crate::tensor::Checkpoint;
use crate::train::{split_cascades, train, training_log_csv, Sample, Split};

pub const MANIFEST_FORMAT: &str = "sdm-manifest-v1";
pub const METHOD_MODEL: &str = "sourcedetmamba";
pub const METHOD_JORDAN: &str = "jordan_center";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Load this hypergraph file instead of generating one.
    pub path: Option<PathBuf>,
    pub nodes: usize,
    pub edges: usize,
    pub size_min: usize,
    pub size_max: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            path: None,
            nodes: 200,
            edges: 80,
            size_min: 2,
            size_max: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub initial_coverages: Vec<f64>,
    pub intervals: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            initial_coverages: vec![0.1, 0.2, 0.3],
            intervals: vec![0.05, 0.10, 0.15, 0.20, 0.25],
            seeds: vec![0],
        }
    }
}

/// Everything a command needs. Nested `seed` fields are derived from the
/// root `seed` during resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub graph: GraphConfig,
    pub cascades: usize,
    pub cascade: CascadeConfig,
    pub model: ModelConfig,
    /// Dataset directory read by `train` (and by `eval` through the run).
    pub data: Option<PathBuf>,
    /// Training output directory read by `eval`.
    pub run: Option<PathBuf>,
    pub threshold: f64,
    pub baseline: bool,
    pub jobs: usize,
    /// Measure wall-clock time into reports. Timings differ between reruns,
    /// so this is off unless asked for.
    pub record_runtime: bool,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            graph: GraphConfig::default(),
            cascades: 300,
            cascade: CascadeConfig::default(),
            model: ModelConfig::default(),
            data: None,
            run: None,
            threshold: DEFAULT_THRESHOLD,
            baseline: false,
            jobs: 1,
            record_runtime: false,
            sweep: SweepConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub baseline: bool,
    pub jobs: Option<usize>,
    pub data: Option<PathBuf>,
    pub run: Option<PathBuf>,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults, then the JSON `file_text` merged key by key, then overrides.
    pub fn resolve(file_text: Option<&str>, overrides: &Overrides) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default()).map_err(|e| Error::json("default config", e))?;
        if let Some(text) = file_text {
            let patch: Value = serde_json::from_str(text).map_err(|e| Error::json("parsing config file", e))?;
            if !patch.is_object() {
                return Err(Error::Validation("config file must hold a JSON object".into()));
            }
            merge(&mut value, patch);
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::json("config", e))?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(t) = overrides.threshold {
            cfg.threshold = t;
        }
        cfg.baseline |= overrides.baseline;
        if let Some(j) = overrides.jobs {
            cfg.jobs = j;
        }
        if overrides.data.is_some() {
            cfg.data = overrides.data.clone();
        }
        if overrides.run.is_some() {
            cfg.run = overrides.run.clone();
        }
        cfg.cascade.seed = derive_seed(cfg.seed, "cascade", 0);
        cfg.model.seed = derive_seed(cfg.seed, "model", 0);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let text = match path {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.cascade.validate()?;
        self.model.validate()?;
        if self.cascades == 0 {
            return Err(Error::Validation("cascades must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Validation(format!("threshold {} must lie in [0, 1]", self.threshold)));
        }
        if self.jobs == 0 {
            return Err(Error::Validation("jobs must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("serializing config", e))
    }

    pub fn fingerprint(&self) -> Result<String> {
        Ok(fingerprint(self.to_json()?.as_bytes()))
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place. Refuses
/// to replace an existing file.
pub fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::AlreadyExists, "artifact exists; outputs are write-once"),
        ));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub root_seed: u64,
    pub hypergraph: String,
    pub hypergraph_fingerprint: String,
    pub nodes: usize,
    pub edges: usize,
    pub cascades: Vec<ManifestEntry>,
}

/// A hypergraph with its cascades, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub hypergraph: Hypergraph,
    pub series: Vec<SnapshotSeries>,
}

pub fn build_hypergraph(cfg: &RunConfig) -> Result<Hypergraph> {
    match &cfg.graph.path {
        Some(p) => load_hypergraph(p),
        None => generate_synthetic(
            cfg.graph.nodes,
            cfg.graph.edges,
            cfg.graph.size_min,
            cfg.graph.size_max,
            derive_seed(cfg.seed, "graph", 0),
        ),
    }
}

/// Simulates `count` cascades; cascade `i` uses seed `derive(root, "cascade", i)`.
pub fn simulate_cascades(hg: &Hypergraph, base: &CascadeConfig, root_seed: u64, count: usize) -> Result<Vec<SnapshotSeries>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let cfg = CascadeConfig {
                seed: derive_seed(root_seed, "cascade", i as u64),
                ..base.clone()
            };
            run_until_coverage(hg, &cfg).map_err(|e| match e {
                Error::Simulation(msg) => Error::Simulation(format!("cascade {i}: {msg}")),
                other => other,
            })
        })
        .collect()
}

pub fn generate_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let hypergraph = build_hypergraph(cfg)?;
    let series = simulate_cascades(&hypergraph, &cfg.cascade, cfg.seed, cfg.cascades)?;
    Ok(Dataset { hypergraph, series })
}

fn cascade_file(i: usize) -> String {
    format!("cascades/cascade_{i:04}.json")
}

pub fn write_dataset(dir: &Path, cfg: &RunConfig, data: &Dataset) -> Result<Manifest> {
    let text = data.hypergraph.to_text();
    write_new(&dir.join("hypergraph.txt"), text.as_bytes())?;
    let mut entries = Vec::with_capacity(data.series.len());
    for (i, s) in data.series.iter().enumerate() {
        let file = cascade_file(i);
        write_new(&dir.join(&file), s.to_json()?.as_bytes())?;
        entries.push(ManifestEntry {
            file,
            seed: s.config.seed,
            sources: s.cascade.sources.clone(),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        root_seed: cfg.seed,
        hypergraph: "hypergraph.txt".into(),
        hypergraph_fingerprint: fingerprint(text.as_bytes()),
        nodes: data.hypergraph.node_count(),
        edges: data.hypergraph.edge_count(),
        cascades: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("serializing manifest", e))?;
    write_new(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::Data(format!("{} has no manifest.json", dir.display())));
    }
    let manifest: Manifest = serde_json::from_str(&read(&manifest_path)?)
        .map_err(|e| Error::json(format!("parsing {}", manifest_path.display()), e))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Data(format!("{}: unsupported format {:?}", manifest_path.display(), manifest.format)));
    }
    let hg_path = dir.join(&manifest.hypergraph);
    let hypergraph = load_hypergraph(&hg_path).map_err(|e| Error::Data(format!("{}: {e}", hg_path.display())))?;
    if hypergraph.node_count() != manifest.nodes || hypergraph.edge_count() != manifest.edges {
        return Err(Error::Data(format!("{} disagrees with the manifest", hg_path.display())));
    }
    let series = manifest
        .cascades
        .par_iter()
        .map(|entry| {
            let s = SnapshotSeries::load(dir.join(&entry.file))?;
            if s.node_count() != hypergraph.node_count() {
                return Err(Error::Data(format!("{}: node count differs from the hypergraph", entry.file)));
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { hypergraph, series })
}

/// Operators and model-ready samples for a dataset.
pub struct Prepared {
    pub ops: GraphOperators,
    pub samples: Vec<Sample>,
}

pub fn prepare(data: &Dataset, pe_width: usize) -> Result<Prepared> {
    let hg = &data.hypergraph;
    let ops = GraphOperators::new(&build_incidence(hg), hg.edge_weights())?;
    let samples = data
        .series
        .par_iter()
        .enumerate()
        .map(|(i, s)| Sample::from_series(hg, s, pe_width, i))
        .collect::<Result<_>>()?;
    Ok(Prepared { ops, samples })
}

fn pick<'a>(samples: &'a [Sample], ids: &[usize]) -> Vec<&'a Sample> {
    ids.iter().map(|&i| &samples[i]).collect()
}

fn timer(enabled: bool) -> impl Fn(Instant) -> f64 {
    move |start: Instant| if enabled { start.elapsed().as_secs_f64() } else { 0.0 }
}

/// Model (and optionally baseline) reports for `test` cascades.
pub fn evaluate(
    model: &SourceDetModel,
    data: &Dataset,
    prepared: &Prepared,
    test: &[usize],
    cfg: &RunConfig,
) -> Result<(Vec<DetectionReport>, Vec<DetectionReport>)> {
    let elapsed = timer(cfg.record_runtime);
    let model_reports = test
        .par_iter()
        .map(|&i| {
            let s = &prepared.samples[i];
            let start = Instant::now();
            let scores = model.predict(&prepared.ops, &s.features)?;
            DetectionReport::new(METHOD_MODEL, i, scores, &s.labels, cfg.threshold, elapsed(start))
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline_reports = if cfg.baseline {
        let pairwise = clique_expand(&data.hypergraph);
        test.iter()
            .map(|&i| {
                let s = &prepared.samples[i];
                let start = Instant::now();
                let scores = jordan_center_baseline(&pairwise, &s.earliest_informed)?;
                DetectionReport::new(METHOD_JORDAN, i, scores, &s.labels, cfg.threshold, elapsed(start))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok((model_reports, baseline_reports))
}

/// Generate, train and evaluate entirely in memory. Returns the test
/// aggregates (model first, then baseline when enabled).
pub fn run_pipeline(cfg: &RunConfig) -> Result<(Vec<Aggregate>, Vec<DetectionReport>)> {
    let data = generate_dataset(cfg)?;
    let prepared = prepare(&data, cfg.model.pe_width)?;
    let split = split_cascades(data.series.len(), cfg.model.train_fraction, cfg.model.val_fraction, derive_seed(cfg.seed, "split", 0))?;
    let model = SourceDetModel::new(&cfg.model)?;
    let outcome = train(model, &prepared.ops, &pick(&prepared.samples, &split.train), &pick(&prepared.samples, &split.val))?;
    let (model_reports, baseline_reports) = evaluate(&outcome.model, &data, &prepared, &split.test, cfg)?;
    let mut aggs = vec![aggregate(METHOD_MODEL, &model_reports)];
    if cfg.baseline {
        aggs.push(aggregate(METHOD_JORDAN, &baseline_reports));
    }
    let mut all = model_reports;
    all.extend(baseline_reports);
    Ok((aggs, all))
}

fn write_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    write_new(&out.join("config.json"), cfg.to_json()?.as_bytes())
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let data = generate_dataset(cfg)?;
    let manifest = write_dataset(out, cfg, &data)?;
    write_config(out, cfg)?;
    info!("wrote {} cascades to {}", manifest.cascades.len(), out.display());
    Ok(manifest)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Split> {
    let data_dir = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Validation("train needs a dataset directory (data)".into()))?;
    let data = load_dataset(data_dir)?;
    let prepared = prepare(&data, cfg.model.pe_width)?;
    let split = split_cascades(data.series.len(), cfg.model.train_fraction, cfg.model.val_fraction, derive_seed(cfg.seed, "split", 0))?;
    info!(
        "training on {} cascades ({} validation, {} held out)",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let model = SourceDetModel::new(&cfg.model)?;
    let outcome = train(model, &prepared.ops, &pick(&prepared.samples, &split.train), &pick(&prepared.samples, &split.val))?;
    write_new(&out.join("checkpoint.json"), outcome.model.params.to_checkpoint().to_json()?.as_bytes())?;
    write_new(&out.join("train_log.csv"), training_log_csv(&outcome.log).as_bytes())?;
    let split_json = serde_json::to_string_pretty(&split).map_err(|e| Error::json("serializing split", e))?;
    write_new(&out.join("split.json"), split_json.as_bytes())?;
    write_config(out, cfg)?;
    Ok(split)
}

/// A finished training run: its config, split and trained model.
pub struct TrainedRun {
    pub config: RunConfig,
    pub split: Split,
    pub model: SourceDetModel,
}

pub fn load_run(dir: &Path) -> Result<TrainedRun> {
    let config = RunConfig::resolve(Some(&read(&dir.join("config.json"))?), &Overrides::default())?;
    let split: Split = serde_json::from_str(&read(&dir.join("split.json"))?).map_err(|e| Error::json("parsing split.json", e))?;
    let ckpt = Checkpoint::from_json(&read(&dir.join("checkpoint.json"))?)?;
    let model = SourceDetModel::from_checkpoint(&config.model, &ckpt)?;
    Ok(TrainedRun { config, split, model })
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<ReportFile> {
    let run_dir = cfg
        .run
        .as_ref()
        .ok_or_else(|| Error::Validation("eval needs a training run directory (run)".into()))?;
    let run = load_run(run_dir)?;
    let data_dir = cfg
        .data
        .clone()
        .or(run.config.data.clone())
        .ok_or_else(|| Error::Validation("eval needs a dataset directory (data)".into()))?;
    let data = load_dataset(&data_dir)?;
    let prepared = prepare(&data, run.config.model.pe_width)?;
    if run.split.test.iter().any(|&i| i >= prepared.samples.len()) {
        return Err(Error::Contract("the run's test split does not fit this dataset".into()));
    }
    if prepared.ops.n != data.hypergraph.node_count() {
        return Err(Error::Contract("hypergraph size changed since training".into()));
    }
    let (model_reports, baseline_reports) = evaluate(&run.model, &data, &prepared, &run.split.test, cfg)?;
    let mut aggs = vec![aggregate(METHOD_MODEL, &model_reports)];
    if cfg.baseline {
        aggs.push(aggregate(METHOD_JORDAN, &baseline_reports));
    }
    let report = ReportFile::new(&cfg.fingerprint()?, cfg.threshold, aggs);
    let mut all = model_reports.clone();
    all.extend(baseline_reports);
    write_new(&out.join("reports.csv"), reports_csv(&all).as_bytes())?;
    write_new(&out.join("report.json"), report.to_json()?.as_bytes())?;

    let thresholds = default_sweep_thresholds();
    let mut sweep_text = String::new();
    let mut pooled = Vec::new();
    for (k, &t) in thresholds.iter().enumerate() {
        let rows: Vec<Metrics> = model_reports
            .iter()
            .map(|r| Ok(threshold_sweep(&r.scores, &prepared.samples[r.cascade].labels, &[t])?[0].1))
            .collect::<Result<_>>()?;
        let mean = |f: fn(&Metrics) -> f64| rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64;
        let m = Metrics {
            acc: mean(|m| m.acc),
            balanced_acc: mean(|m| m.balanced_acc),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f_score: mean(|m| m.f_score),
            auc: mean(|m| m.auc),
        };
        pooled.push((thresholds[k], m));
    }
    sweep_text.push_str(&threshold_sweep_csv(METHOD_MODEL, &pooled));
    write_new(&out.join("threshold_sweep.csv"), sweep_text.as_bytes())?;
    write_config(out, cfg)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub initial_coverage: f64,
    pub interval: f64,
    pub seed: u64,
    pub f_score: f64,
    pub auc: f64,
    pub acc: f64,
    pub runtime_s: f64,
}

/// Coverage targets `initial, initial + interval, …` with as many captures
/// as the base config has.
pub fn coverage_grid_targets(initial: f64, interval: f64, captures: usize) -> Vec<f64> {
    (0..captures).map(|i| initial + interval * i as f64).collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("initial_coverage,interval,seed,f_score,auc,acc,runtime_s\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.initial_coverage, r.interval, r.seed, r.f_score, r.auc, r.acc, r.runtime_s
        );
    }
    out
}

/// One generate + train + eval per (initial coverage, interval, seed) cell.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let captures = cfg.cascade.coverage_targets.len();
    let elapsed = timer(cfg.record_runtime);
    let mut rows = Vec::new();
    for &initial in &cfg.sweep.initial_coverages {
        for &interval in &cfg.sweep.intervals {
            for &seed in &cfg.sweep.seeds {
                let mut cell = cfg.clone();
                cell.seed = seed;
                cell.cascade.coverage_targets = coverage_grid_targets(initial, interval, captures);
                cell.cascade.seed = derive_seed(seed, "cascade", 0);
                cell.model.seed = derive_seed(seed, "model", 0);
                cell.validate()?;
                let start = Instant::now();
                let (aggs, _) = run_pipeline(&cell)?;
                let m = &aggs[0];
                info!("sweep cell ({initial}, {interval}, seed {seed}): F {:.4}", m.f_score.mean);
                rows.push(SweepRow {
                    initial_coverage: initial,
                    interval,
                    seed,
                    f_score: m.f_score.mean,
                    auc: m.auc.mean,
                    acc: m.acc.mean,
                    runtime_s: elapsed(start),
                });
            }
        }
    }
    Ok(rows)
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let rows = run_sweep(cfg)?;
    write_new(&out.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    write_config(out, cfg)?;
    Ok(rows)
}
