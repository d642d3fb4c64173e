//! Rumor propagation on hypergraphs with pairwise (low-order) and
//! within-hyperedge (high-order) transmission, plus coverage-triggered
//! snapshot capture.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{clique_expand, Hypergraph, PairwiseGraph};
use crate::rng::{derive_seed, rng_from_seed, Rng};

pub const SNAPSHOT_FORMAT: &str = "sds-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiffusionModel {
    #[serde(rename = "IC")]
    Ic,
    #[serde(rename = "SI")]
    Si,
    #[serde(rename = "SIS")]
    Sis,
    #[serde(rename = "SIR")]
    Sir,
}

impl DiffusionModel {
    /// Whether informed sets can only grow.
    pub fn is_monotone(self) -> bool {
        matches!(self, DiffusionModel::Ic | DiffusionModel::Si)
    }
}

impl std::str::FromStr for DiffusionModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IC" => Ok(DiffusionModel::Ic),
            "SI" => Ok(DiffusionModel::Si),
            "SIS" => Ok(DiffusionModel::Sis),
            "SIR" => Ok(DiffusionModel::Sir),
            other => Err(Error::Validation(format!("unknown diffusion model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeConfig {
    pub model: DiffusionModel,
    pub source_fraction: f64,
    pub p_low_range: (f64, f64),
    pub high_order_coefficient: f64,
    pub recovery_probability: f64,
    pub seed: u64,
    pub coverage_targets: Vec<f64>,
    pub max_steps: u32,
    pub max_retries: u32,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            model: DiffusionModel::Ic,
            source_fraction: 0.05,
            p_low_range: (0.0, 0.5),
            high_order_coefficient: 0.3,
            recovery_probability: 0.1,
            seed: 0,
            coverage_targets: vec![0.1, 0.2, 0.3],
            max_steps: 200,
            max_retries: 50,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.coverage_targets.is_empty() {
            return bad("coverage_targets must not be empty".into());
        }
        if self
            .coverage_targets
            .iter()
            .any(|&t| !(t > 0.0 && t <= 1.0))
        {
            return bad(format!("coverage targets {:?} must lie in (0, 1]", self.coverage_targets));
        }
        if self.coverage_targets.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "coverage targets {:?} must be strictly ascending",
                self.coverage_targets
            ));
        }
        let min_target = self.coverage_targets[0];
        if !(self.source_fraction > 0.0 && self.source_fraction < min_target) {
            return bad(format!(
                "source_fraction {} must lie in (0, {min_target})",
                self.source_fraction
            ));
        }
        let (lo, hi) = self.p_low_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("p_low_range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"));
        }
        if !(self.high_order_coefficient >= 0.0 && self.high_order_coefficient <= 1.0) {
            return bad(format!(
                "high_order_coefficient {} must lie in [0, 1]",
                self.high_order_coefficient
            ));
        }
        if !(0.0..=1.0).contains(&self.recovery_probability) {
            return bad(format!(
                "recovery_probability {} must lie in [0, 1]",
                self.recovery_probability
            ));
        }
        if self.max_steps == 0 || self.max_retries == 0 {
            return bad("max_steps and max_retries must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum NodeState {
    Uninformed = 0,
    Informed = 1,
    Recovered = 2,
}

impl NodeState {
    /// Recovered nodes did spread the rumor, so they count as informed for
    /// coverage and features.
    pub fn has_informed(self) -> bool {
        !matches!(self, NodeState::Uninformed)
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(NodeState::Uninformed),
            1 => Ok(NodeState::Informed),
            2 => Ok(NodeState::Recovered),
            other => Err(Error::Data(format!("unknown node state code {other}"))),
        }
    }
}

/// Sources, first-infection steps and per-node low-order rates of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub sources: Vec<usize>,
    pub infection_time: Vec<Option<u32>>,
    pub node_rates: Vec<f64>,
}

/// Mutable state of a running cascade.
#[derive(Debug, Clone)]
pub struct CascadeState {
    pub status: Vec<NodeState>,
    pub infection_time: Vec<Option<u32>>,
    /// IC only: nodes informed in the previous round, which still get their
    /// single round of low-order attempts.
    pub active: Vec<bool>,
    pub step: u32,
}

impl CascadeState {
    pub fn seeded(n: usize, sources: &[usize]) -> Self {
        let mut status = vec![NodeState::Uninformed; n];
        let mut infection_time = vec![None; n];
        let mut active = vec![false; n];
        for &s in sources {
            status[s] = NodeState::Informed;
            infection_time[s] = Some(0);
            active[s] = true;
        }
        Self {
            status,
            infection_time,
            active,
            step: 0,
        }
    }

    pub fn informed_count(&self) -> usize {
        self.status.iter().filter(|s| s.has_informed()).count()
    }

    pub fn informed_fraction(&self) -> f64 {
        self.informed_count() as f64 / self.status.len() as f64
    }
}

/// Captured snapshots of one cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSeries {
    pub times: Vec<u32>,
    pub states: Vec<Vec<NodeState>>,
    pub cascade: Cascade,
    pub config: CascadeConfig,
}

impl SnapshotSeries {
    pub fn node_count(&self) -> usize {
        self.cascade.infection_time.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn informed_mask(&self, capture: usize) -> Vec<bool> {
        self.states[capture].iter().map(|s| s.has_informed()).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        let mut labels = vec![0.0; self.node_count()];
        for &s in &self.cascade.sources {
            labels[s] = 1.0;
        }
        labels
    }
}

/// `⌈fraction·n⌉` distinct nodes drawn uniformly.
pub fn select_sources(n: usize, fraction: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(format!("source fraction {fraction} must lie in (0, 1)")));
    }
    // Guard against 0.05 * 100 landing a hair above 5.
    let count = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    if count == 0 {
        return Err(Error::Validation(format!(
            "source fraction {fraction} of {n} nodes selects no source"
        )));
    }
    let mut sources = sample(rng, n, count).into_vec();
    sources.sort_unstable();
    Ok(sources)
}

/// High-order transition probability `coefficient · |e ∩ v⁺| / |e|`.
pub fn high_order_probability(coefficient: f64, informed_in_edge: usize, edge_size: usize) -> f64 {
    coefficient * informed_in_edge as f64 / edge_size as f64
}

pub fn draw_node_rates(n: usize, range: (f64, f64), rng: &mut Rng) -> Vec<f64> {
    let (lo, hi) = range;
    (0..n).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect()
}

/// One synchronous round. All transmission decisions read the state as it
/// was at the start of the round.
pub fn step(
    hg: &Hypergraph,
    neighbors: &PairwiseGraph,
    state: &mut CascadeState,
    rates: &[f64],
    config: &CascadeConfig,
    rng: &mut Rng,
) {
    let n = hg.node_count();
    let prev = state.status.clone();
    let mut newly = vec![false; n];

    // (a) low-order: informed node v tries each clique neighbour with p_v.
    for v in 0..n {
        if prev[v] != NodeState::Informed {
            continue;
        }
        if config.model == DiffusionModel::Ic && !state.active[v] {
            continue;
        }
        for &u in neighbors.neighbors(v) {
            if prev[u] == NodeState::Uninformed && rng.gen::<f64>() < rates[v] {
                newly[u] = true;
            }
        }
    }

    // (b) high-order: one independent trial per incident hyperedge.
    if config.high_order_coefficient > 0.0 {
        for edge in hg.edges() {
            let informed = edge.iter().filter(|&&u| prev[u] == NodeState::Informed).count();
            if informed == 0 {
                continue;
            }
            let p = high_order_probability(config.high_order_coefficient, informed, edge.len());
            for &u in edge {
                if prev[u] == NodeState::Uninformed && rng.gen::<f64>() < p {
                    newly[u] = true;
                }
            }
        }
    }

    // (c) recovery applies to nodes informed before this round.
    match config.model {
        DiffusionModel::Sis | DiffusionModel::Sir => {
            let recovered = if config.model == DiffusionModel::Sis {
                NodeState::Uninformed
            } else {
                NodeState::Recovered
            };
            for v in 0..n {
                if prev[v] == NodeState::Informed && rng.gen::<f64>() < config.recovery_probability {
                    state.status[v] = recovered;
                }
            }
        }
        DiffusionModel::Ic | DiffusionModel::Si => {}
    }

    state.step += 1;
    if config.model == DiffusionModel::Ic {
        state.active.iter_mut().for_each(|a| *a = false);
    }
    for u in (0..n).filter(|&u| newly[u]) {
        state.status[u] = NodeState::Informed;
        state.active[u] = true;
        if state.infection_time[u].is_none() {
            state.infection_time[u] = Some(state.step);
        }
    }
}

/// True when no further infection can happen.
fn is_stalled(hg: &Hypergraph, neighbors: &PairwiseGraph, state: &CascadeState, config: &CascadeConfig) -> bool {
    let status = &state.status;
    let any_uninformed_with_informed_edge = || {
        hg.edges().iter().any(|e| {
            e.iter().any(|&u| status[u] == NodeState::Informed)
                && e.iter().any(|&u| status[u] == NodeState::Uninformed)
        })
    };
    if !status.iter().any(|&s| s == NodeState::Informed) {
        return true;
    }
    let low_possible = (0..status.len()).any(|v| {
        status[v] == NodeState::Informed
            && (config.model != DiffusionModel::Ic || state.active[v])
            && neighbors
                .neighbors(v)
                .iter()
                .any(|&u| status[u] == NodeState::Uninformed)
    });
    let high_possible = config.high_order_coefficient > 0.0 && any_uninformed_with_informed_edge();
    // SIS can reopen nodes, so only a dead epidemic is final there.
    !low_possible && !high_possible && config.model != DiffusionModel::Sis
}

enum Attempt {
    Done(SnapshotSeries),
    Unreached(f64),
}

fn simulate_once(
    hg: &Hypergraph,
    neighbors: &PairwiseGraph,
    config: &CascadeConfig,
    seed: u64,
) -> Result<Attempt> {
    let n = hg.node_count();
    let mut rng = rng_from_seed(seed);
    let node_rates = draw_node_rates(n, config.p_low_range, &mut rng);
    let sources = select_sources(n, config.source_fraction, &mut rng)?;
    let mut state = CascadeState::seeded(n, &sources);
    let mut times = Vec::new();
    let mut states = Vec::new();
    loop {
        let fraction = state.informed_fraction();
        while times.len() < config.coverage_targets.len()
            && fraction >= config.coverage_targets[times.len()]
        {
            times.push(state.step);
            states.push(state.status.clone());
        }
        if times.len() == config.coverage_targets.len() {
            break;
        }
        if state.step >= config.max_steps || is_stalled(hg, neighbors, &state, config) {
            return Ok(Attempt::Unreached(config.coverage_targets[times.len()]));
        }
        step(hg, neighbors, &mut state, &node_rates, config, &mut rng);
    }
    Ok(Attempt::Done(SnapshotSeries {
        times,
        states,
        cascade: Cascade {
            sources,
            infection_time: state.infection_time,
            node_rates,
        },
        config: CascadeConfig {
            seed,
            ..config.clone()
        },
    }))
}

/// Runs the cascade until every coverage target has been captured. A run
/// that stalls or hits `max_steps` first is discarded and redrawn from a
/// derived seed, up to `max_retries` attempts in total.
pub fn run_until_coverage(hg: &Hypergraph, config: &CascadeConfig) -> Result<SnapshotSeries> {
    config.validate()?;
    let neighbors = clique_expand(hg);
    let mut last_unreached = config.coverage_targets[0];
    for attempt in 0..config.max_retries {
        let seed = if attempt == 0 {
            config.seed
        } else {
            derive_seed(config.seed, "retry", attempt as u64)
        };
        match simulate_once(hg, &neighbors, config, seed)? {
            Attempt::Done(series) => return Ok(series),
            Attempt::Unreached(target) => last_unreached = target,
        }
    }
    Err(Error::Simulation(format!(
        "coverage target {last_unreached} not reached after {} attempts (seed {})",
        config.max_retries, config.seed
    )))
}

#[derive(Serialize, Deserialize)]
struct SeriesFile {
    format: String,
    n: usize,
    times: Vec<u32>,
    states: Vec<Vec<u8>>,
    sources: Vec<usize>,
    infection_time: Vec<Option<u32>>,
    node_rates: Vec<f64>,
    config: CascadeConfig,
}

impl SnapshotSeries {
    pub fn to_json(&self) -> Result<String> {
        let file = SeriesFile {
            format: SNAPSHOT_FORMAT.to_string(),
            n: self.node_count(),
            times: self.times.clone(),
            states: self
                .states
                .iter()
                .map(|s| s.iter().map(|&x| x as u8).collect())
                .collect(),
            sources: self.cascade.sources.clone(),
            infection_time: self.cascade.infection_time.clone(),
            node_rates: self.cascade.node_rates.clone(),
            config: self.config.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::json("serializing snapshot series", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SeriesFile =
            serde_json::from_str(text).map_err(|e| Error::json("parsing snapshot series", e))?;
        if file.format != SNAPSHOT_FORMAT {
            return Err(Error::Data(format!(
                "expected format {SNAPSHOT_FORMAT}, found {:?}",
                file.format
            )));
        }
        let n = file.n;
        if file.infection_time.len() != n || file.node_rates.len() != n {
            return Err(Error::Data("per-node arrays disagree with n".into()));
        }
        if file.times.len() != file.states.len() {
            return Err(Error::Data("times and states differ in length".into()));
        }
        let states = file
            .states
            .iter()
            .map(|row| {
                if row.len() != n {
                    return Err(Error::Data("state row length differs from n".into()));
                }
                row.iter().map(|&c| NodeState::from_code(c)).collect()
            })
            .collect::<Result<Vec<Vec<NodeState>>>>()?;
        if file.sources.iter().any(|&s| s >= n) {
            return Err(Error::Data("source id out of range".into()));
        }
        Ok(Self {
            times: file.times,
            states,
            cascade: Cascade {
                sources: file.sources,
                infection_time: file.infection_time,
                node_rates: file.node_rates,
            },
            config: file.config,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}
