//! C ABI over `sdm-core`.
//!
//! Every function returns an [`SdmStatus`]. On failure the message is kept
//! per thread and can be copied out with [`sdm_last_error`]. Objects cross
//! the boundary as opaque handles that the caller releases with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sdm_core::diffusion::{run_until_coverage, CascadeConfig, SnapshotSeries};
use sdm_core::eval::{jordan_center_baseline, metrics};
use sdm_core::features::assemble_features;
use sdm_core::hypergraph::{build_incidence, clique_expand, generate_synthetic, load_hypergraph, parse_hypergraph, Hypergraph};
use sdm_core::layers::GraphOperators;
use sdm_core::model::{ModelConfig, SourceDetModel};
use sdm_core::tensor::Checkpoint;
use sdm_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Contract = 5,
    Numeric = 6,
    Simulation = 7,
    Data = 8,
    Io = 9,
    Json = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for SdmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse { .. } => SdmStatus::Parse,
            Error::Validation(_) => SdmStatus::Validation,
            Error::Contract(_) => SdmStatus::Contract,
            Error::Numeric(_) => SdmStatus::Numeric,
            Error::Simulation(_) => SdmStatus::Simulation,
            Error::Data(_) => SdmStatus::Data,
            Error::Io { .. } => SdmStatus::Io,
            Error::Json { .. } => SdmStatus::Json,
        }
    }
}

/// Opaque hypergraph.
pub struct SdmHypergraph(Hypergraph);

/// Opaque cascade with its captured snapshots.
pub struct SdmCascade(SnapshotSeries);

/// Opaque trained model.
pub struct SdmModel(SourceDetModel);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SdmMetrics {
    pub acc: f64,
    pub balanced_acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub auc: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(SdmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SdmStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> SdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SdmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SdmStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(SdmStatus::NullPointer, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SdmStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize, name: &str) -> FfiResult<&'a mut [f64]> {
    if p.is_null() {
        return Err(null(name));
    }
    if len < needed {
        return Err(Failure(
            SdmStatus::BufferTooSmall,
            format!("{name} holds {len} values, {needed} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>, what: &str) -> FfiResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| Failure(SdmStatus::Json, format!("{what}: {e}"))),
    }
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `cap` bytes. Returns the full length
/// of the message plus one, so callers can size a buffer with `cap = 0`.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null when `cap` is 0.
#[no_mangle]
pub unsafe extern "C" fn sdm_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Static NUL-terminated version string.
#[no_mangle]
pub extern "C" fn sdm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses hypergraph text (one hyperedge of node ids per line).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdm_hypergraph_parse(text: *const c_char, out: *mut *mut SdmHypergraph) -> SdmStatus {
    guard(|| {
        let hg = parse_hypergraph(str_arg(text, "text")?)?;
        put(out, SdmHypergraph(hg))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdm_hypergraph_load(path: *const c_char, out: *mut *mut SdmHypergraph) -> SdmStatus {
    guard(|| {
        let hg = load_hypergraph(str_arg(path, "path")?)?;
        put(out, SdmHypergraph(hg))
    })
}

/// Random hypergraph with `edges` hyperedges of sizes in `[size_min, size_max]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdm_hypergraph_generate(
    nodes: usize,
    edges: usize,
    size_min: usize,
    size_max: usize,
    seed: u64,
    out: *mut *mut SdmHypergraph,
) -> SdmStatus {
    guard(|| {
        let hg = generate_synthetic(nodes, edges, size_min, size_max, seed)?;
        put(out, SdmHypergraph(hg))
    })
}

/// # Safety
/// `hg` must be a live handle; the outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn sdm_hypergraph_size(hg: *const SdmHypergraph, nodes: *mut usize, edges: *mut usize) -> SdmStatus {
    guard(|| {
        let hg = &handle(hg, "hg")?.0;
        if let Some(n) = nodes.as_mut() {
            *n = hg.node_count();
        }
        if let Some(m) = edges.as_mut() {
            *m = hg.edge_count();
        }
        Ok(())
    })
}

/// # Safety
/// `hg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdm_hypergraph_free(hg: *mut SdmHypergraph) {
    if !hg.is_null() {
        drop(Box::from_raw(hg));
    }
}

/// Simulates one cascade. `config_json` holds cascade settings (null for
/// defaults); `seed` replaces its seed.
///
/// # Safety
/// `hg` must be a live handle; `config_json` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdm_cascade_simulate(
    hg: *const SdmHypergraph,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut SdmCascade,
) -> SdmStatus {
    guard(|| {
        let hg = &handle(hg, "hg")?.0;
        let mut cfg: CascadeConfig = parse_json(opt_str_arg(config_json, "config_json")?, "cascade config")?;
        cfg.seed = seed;
        let series = run_until_coverage(hg, &cfg)?;
        put(out, SdmCascade(series))
    })
}

/// Reads a cascade from its JSON snapshot format.
///
/// # Safety
/// `json` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdm_cascade_from_json(json: *const c_char, out: *mut *mut SdmCascade) -> SdmStatus {
    guard(|| {
        let series = SnapshotSeries::from_json(str_arg(json, "json")?)?;
        put(out, SdmCascade(series))
    })
}

/// Number of snapshots and of sources.
///
/// # Safety
/// `cascade` must be a live handle; the outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn sdm_cascade_info(cascade: *const SdmCascade, snapshots: *mut usize, sources: *mut usize) -> SdmStatus {
    guard(|| {
        let c = &handle(cascade, "cascade")?.0;
        if let Some(s) = snapshots.as_mut() {
            *s = c.len();
        }
        if let Some(s) = sources.as_mut() {
            *s = c.cascade.sources.len();
        }
        Ok(())
    })
}

/// Writes 1.0 for sources and 0.0 elsewhere into `labels[0..n]`.
///
/// # Safety
/// `cascade` must be a live handle; `labels` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdm_cascade_labels(cascade: *const SdmCascade, labels: *mut f64, len: usize) -> SdmStatus {
    guard(|| {
        let c = &handle(cascade, "cascade")?.0;
        let l = c.labels();
        out_slice(labels, len, l.len(), "labels")?[..l.len()].copy_from_slice(&l);
        Ok(())
    })
}

/// # Safety
/// `cascade` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdm_cascade_free(cascade: *mut SdmCascade) {
    if !cascade.is_null() {
        drop(Box::from_raw(cascade));
    }
}

/// Builds a model from its JSON config (null for defaults) and a checkpoint.
///
/// # Safety
/// `config_json` null or NUL-terminated; `checkpoint_json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdm_model_load(
    config_json: *const c_char,
    checkpoint_json: *const c_char,
    out: *mut *mut SdmModel,
) -> SdmStatus {
    guard(|| {
        let cfg: ModelConfig = parse_json(opt_str_arg(config_json, "config_json")?, "model config")?;
        let ckpt = Checkpoint::from_json(str_arg(checkpoint_json, "checkpoint_json")?)?;
        put(out, SdmModel(SourceDetModel::from_checkpoint(&cfg, &ckpt)?))
    })
}

/// Freshly initialized model from its JSON config (null for defaults).
///
/// # Safety
/// `config_json` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdm_model_new(config_json: *const c_char, out: *mut *mut SdmModel) -> SdmStatus {
    guard(|| {
        let cfg: ModelConfig = parse_json(opt_str_arg(config_json, "config_json")?, "model config")?;
        put(out, SdmModel(SourceDetModel::new(&cfg)?))
    })
}

/// Source scores for every node of `hg` given the cascade's snapshots.
///
/// # Safety
/// Handles must be live; `scores` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdm_model_predict(
    model: *const SdmModel,
    hg: *const SdmHypergraph,
    cascade: *const SdmCascade,
    scores: *mut f64,
    len: usize,
) -> SdmStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let hg = &handle(hg, "hg")?.0;
        let series = &handle(cascade, "cascade")?.0;
        let ops = GraphOperators::new(&build_incidence(hg), hg.edge_weights())?;
        let features = assemble_features(hg, series, model.config.pe_width)?;
        let s = model.predict(&ops, &features)?;
        out_slice(scores, len, s.len(), "scores")?[..s.len()].copy_from_slice(&s);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdm_model_free(model: *mut SdmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Jordan-center scores on snapshot `capture` of the cascade.
///
/// # Safety
/// Handles must be live; `scores` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdm_jordan_center(
    hg: *const SdmHypergraph,
    cascade: *const SdmCascade,
    capture: usize,
    scores: *mut f64,
    len: usize,
) -> SdmStatus {
    guard(|| {
        let hg = &handle(hg, "hg")?.0;
        let series = &handle(cascade, "cascade")?.0;
        if capture >= series.len() {
            return Err(Failure(
                SdmStatus::Contract,
                format!("capture {capture} out of range for {} snapshots", series.len()),
            ));
        }
        let s = jordan_center_baseline(&clique_expand(hg), &series.informed_mask(capture))?;
        out_slice(scores, len, s.len(), "scores")?[..s.len()].copy_from_slice(&s);
        Ok(())
    })
}

/// Detection metrics of `scores` against 0/1 `labels` at `threshold`.
///
/// # Safety
/// `scores` and `labels` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdm_metrics(
    scores: *const f64,
    labels: *const f64,
    len: usize,
    threshold: f64,
    out: *mut SdmMetrics,
) -> SdmStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() {
            return Err(null("scores or labels"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = std::slice::from_raw_parts(scores, len);
        let l = std::slice::from_raw_parts(labels, len);
        let m = metrics(s, l, threshold)?;
        *out = SdmMetrics {
            acc: m.acc,
            balanced_acc: m.balanced_acc,
            precision: m.precision,
            recall: m.recall,
            f_score: m.f_score,
            auc: m.auc,
        };
        Ok(())
    })
}
