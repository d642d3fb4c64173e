//! Class-balanced objective, Adam and the train/validation/test protocol.

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::SnapshotSeries;
use crate::error::{Error, Result};
use crate::eval::{metrics, DEFAULT_THRESHOLD};
use crate::features::assemble_features;
use crate::hypergraph::Hypergraph;
use crate::layers::GraphOperators;
use crate::model::SourceDetModel;
use crate::rng::derived_rng;
use crate::tensor::{Gradients, Graph, ParamStore, Tensor, Var};

/// One cascade prepared for the model.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: usize,
    /// Snapshot features in capture order.
    pub features: Vec<Tensor>,
    /// 1 for sources, 0 otherwise.
    pub labels: Vec<f64>,
    /// Informed nodes at the earliest capture.
    pub earliest_informed: Vec<bool>,
}

impl Sample {
    pub fn from_series(hg: &Hypergraph, series: &SnapshotSeries, pe_width: usize, id: usize) -> Result<Self> {
        let labels = series.labels();
        if !labels.iter().any(|&l| l == 1.0) {
            return Err(Error::Data(format!("cascade {id} has no source")));
        }
        Ok(Self {
            id,
            features: assemble_features(hg, series, pe_width)?,
            labels,
            earliest_informed: series.informed_mask(0),
        })
    }

    pub fn source_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1.0).count()
    }
}

/// `ξ = |s| / (n − |s|)`.
pub fn balance_coefficient(n: usize, sources: usize) -> Result<f64> {
    if sources == 0 || sources >= n {
        return Err(Error::Contract(format!("{sources} sources among {n} nodes leaves a class empty")));
    }
    Ok(sources as f64 / (n - sources) as f64)
}

/// `Σ_{v∈s} CE(v) + ξ Σ_{v∉s} CE(v) + λ Σ‖w‖²` over every parameter in `store`.
pub fn balanced_loss(g: &mut Graph, store: &ParamStore, scores: Var, labels: &[f64], lambda: f64) -> Result<Var> {
    let sources = labels.iter().filter(|&&l| l == 1.0).count();
    let xi = balance_coefficient(labels.len(), sources)?;
    let weights: Vec<f64> = labels.iter().map(|&l| if l == 1.0 { 1.0 } else { xi }).collect();
    let mut loss = g.weighted_bce(scores, labels, &weights)?;
    if lambda != 0.0 {
        for id in store.ids() {
            let w = g.param(store, id)?;
            let sq = g.sum_squares(w)?;
            let sq = g.scale(sq, lambda)?;
            loss = g.add(loss, sq)?;
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).numel()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies the accumulated gradients in `store` and clears them.
    /// Subnormal moments and parameters are flushed to zero: weights of dead
    /// units otherwise decay geometrically under the L2 term into the
    /// subnormal range, where every product through them runs far slower.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let grad = store.grad(id).data().to_vec();
            let value = store.value_mut(id).data_mut();
            for (i, g) in grad.into_iter().enumerate() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                value[i] -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                flush_subnormal(m);
                flush_subnormal(v);
                flush_subnormal(&mut value[i]);
            }
        }
        store.zero_grad();
    }
}

fn flush_subnormal(x: &mut f64) {
    if x.is_subnormal() {
        *x = 0.0;
    }
}

/// Cascade indices split by a seeded shuffle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..count`, keeps `round(train_fraction·count)` for training and
/// carves `round(val_fraction·|train|)` of those off for validation.
pub fn split_cascades(count: usize, train_fraction: f64, val_fraction: f64, seed: u64) -> Result<Split> {
    if count < 2 {
        return Err(Error::Data(format!("need at least two cascades to split, got {count}")));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut derived_rng(seed, "split", 0));
    let n_train = ((train_fraction * count as f64).round() as usize).clamp(1, count - 1);
    let test = order.split_off(n_train);
    let n_val = ((val_fraction * n_train as f64).round() as usize).min(n_train - 1);
    let train = order.split_off(n_val);
    Ok(Split {
        train,
        val: order,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f_score: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SourceDetModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_f_score,val_loss\n");
    for e in log {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_f_score, e.val_loss);
    }
    out
}

fn sample_gradients(model: &SourceDetModel, ops: &GraphOperators, sample: &Sample, lambda: f64) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let scores = model.forward(&mut g, ops, &sample.features)?;
    let loss = balanced_loss(&mut g, &model.params, scores, &sample.labels, lambda)?;
    let value = g.value(loss).item()?;
    Ok((value, g.backward(loss)?))
}

fn with_context(e: Error, epoch: usize, sample: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, cascade {sample}: {msg}")),
        other => other,
    }
}

/// Mean F-score at the default threshold and mean balanced loss over `samples`.
pub fn validate(model: &SourceDetModel, ops: &GraphOperators, samples: &[&Sample], lambda: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let rows: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let mut g = Graph::new();
            let scores = model.forward(&mut g, ops, &s.features)?;
            let f = metrics(g.value(scores).data(), &s.labels, DEFAULT_THRESHOLD)?.f_score;
            let loss = balanced_loss(&mut g, &model.params, scores, &s.labels, lambda)?;
            Ok((f, g.value(loss).item()?))
        })
        .collect::<Result<_>>()?;
    let k = rows.len() as f64;
    Ok((rows.iter().map(|r| r.0).sum::<f64>() / k, rows.iter().map(|r| r.1).sum::<f64>() / k))
}

/// Minibatch Adam on the mean balanced loss. Keeps the parameters with the
/// best validation F-score (ties go to the lower validation loss) and stops
/// after `patience` epochs without improvement. Without a validation set the
/// final parameters are kept.
pub fn train(mut model: SourceDetModel, ops: &GraphOperators, train_set: &[&Sample], val_set: &[&Sample]) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let lambda = cfg.weight_decay;
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, ParamStore)> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut derived_rng(cfg.seed, "epoch", epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|&i| sample_gradients(&model, ops, train_set[i], lambda).map_err(|e| with_context(e, epoch, train_set[i].id)))
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut sum = Gradients::default();
            for (loss, grads) in &results {
                total += loss;
                sum.merge(grads);
            }
            sum.scale(scale);
            model.params.zero_grad();
            model.params.accumulate(&sum)?;
            adam.step(&mut model.params);
        }
        let train_loss = total / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: training loss is {train_loss}")));
        }
        let (val_f, val_loss) = validate(&model, ops, val_set, lambda)?;
        log.push(EpochLog {
            epoch,
            train_loss,
            val_f_score: val_f,
            val_loss,
        });
        debug!("epoch {epoch}: loss {train_loss:.5}, val F {val_f:.4}, val loss {val_loss:.5}");
        if val_set.is_empty() {
            continue;
        }
        let improved = match &best {
            None => true,
            Some((f, l, _, _)) => val_f > *f || (val_f == *f && val_loss < *l),
        };
        if improved {
            best = Some((val_f, val_loss, epoch, model.params.clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.2) >= cfg.patience {
            info!("early stop at epoch {epoch}");
            stopped_early = true;
            break;
        }
    }

    let best_epoch = match best {
        Some((_, _, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => log.len(),
    };
    info!("trained {} epochs, keeping epoch {best_epoch}", log.len());
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        stopped_early,
    })
}
