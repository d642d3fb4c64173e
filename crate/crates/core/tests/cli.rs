use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdm_core::harness::{Overrides, RunConfig, METHOD_JORDAN, METHOD_MODEL};
use sdm_core::train::Split;

const SMALL: &str = r#"{
    "cascades": 10,
    "graph": {"nodes": 30, "edges": 12},
    "model": {"epochs": 3, "channels": 4, "d_state": 4, "head_hidden": 8, "hgnn_width": 8, "pe_width": 2}
}"#;

fn sdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdm"))
        .args(args)
        .env("SDM_LOG", "warn")
        .output()
        .expect("sdm runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sdm(args);
    assert!(out.status.success(), "sdm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let path = root.join("config.json");
        fs::write(&path, config).unwrap();
        Self { _dir: dir, root, config: path }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn generate(&self, out: &str) -> PathBuf {
        let out = self.path(out);
        ok(&["generate", "--config", s(&self.config), "--seed", "3", "--out", s(&out)]);
        out
    }

    fn train(&self, data: &Path, out: &str) -> PathBuf {
        let out = self.path(out);
        ok(&["train", "--config", s(&self.config), "--seed", "3", "--data", s(data), "--out", s(&out)]);
        out
    }
}

/// Every file under `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn method_f_and_auc(report_json: &Path) -> Vec<(String, f64, f64)> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report_json).unwrap()).unwrap();
    v["aggregates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            (
                a["method"].as_str().unwrap().to_string(),
                a["f_score"]["mean"].as_f64().unwrap(),
                a["auc"]["mean"].as_f64().unwrap(),
            )
        })
        .collect()
}

#[test]
fn generate_writes_manifest_and_cascades() {
    let ws = Workspace::new(SMALL);
    let data = ws.generate("data");
    assert!(data.join("manifest.json").exists());
    assert!(data.join("hypergraph.txt").exists());
    assert_eq!(fs::read_dir(data.join("cascades")).unwrap().count(), 10);
}

#[test]
fn ten_cascades_split_eight_to_two() {
    let ws = Workspace::new(SMALL);
    let data = ws.generate("data");
    let run = ws.train(&data, "run");
    let split: Split = serde_json::from_str(&fs::read_to_string(run.join("split.json")).unwrap()).unwrap();
    assert_eq!(split.train.len() + split.val.len(), 8);
    assert_eq!(split.test.len(), 2);
}

#[test]
fn reruns_with_the_resolved_config_are_bit_identical() {
    let ws = Workspace::new(SMALL);
    let data = ws.generate("data");
    let data_again = ws.path("data_again");
    ok(&["generate", "--config", s(&data.join("config.json")), "--out", s(&data_again)]);
    assert_eq!(snapshot(&data), snapshot(&data_again));

    let run = ws.train(&data, "run");
    let run_again = ws.path("run_again");
    ok(&["train", "--config", s(&run.join("config.json")), "--out", s(&run_again)]);
    assert_eq!(snapshot(&run), snapshot(&run_again));

    let eval = ws.path("eval");
    ok(&["eval", "--config", s(&ws.config), "--seed", "3", "--run", s(&run), "--data", s(&data), "--baseline", "--out", s(&eval)]);
    let eval_again = ws.path("eval_again");
    ok(&["eval", "--config", s(&eval.join("config.json")), "--out", s(&eval_again)]);
    assert_eq!(snapshot(&eval), snapshot(&eval_again));
}

#[test]
fn missing_manifest_is_reported() {
    let ws = Workspace::new(SMALL);
    let empty = ws.path("empty");
    fs::create_dir(&empty).unwrap();
    let out = sdm(&["train", "--config", s(&ws.config), "--data", s(&empty), "--out", s(&ws.path("run"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.json"));
}

#[test]
fn outputs_are_never_overwritten() {
    let ws = Workspace::new(SMALL);
    let data = ws.generate("data");
    let before = snapshot(&data);
    let out = sdm(&["generate", "--config", s(&ws.config), "--seed", "4", "--out", s(&data)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("write-once"));
    assert_eq!(snapshot(&data), before);
}

#[test]
fn baseline_adds_a_row_and_threshold_leaves_auc_alone() {
    let ws = Workspace::new(SMALL);
    let data = ws.generate("data");
    let run = ws.train(&data, "run");
    let eval = |name: &str, extra: &[&str]| {
        let out = ws.path(name);
        let mut args = vec!["eval", "--config", s(&ws.config), "--run", s(&run), "--data", s(&data), "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        method_f_and_auc(&out.join("report.json"))
    };
    let plain = eval("plain", &[]);
    let with_baseline = eval("baseline", &["--baseline"]);
    assert_eq!(plain.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), [METHOD_MODEL]);
    assert_eq!(with_baseline.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), [METHOD_MODEL, METHOD_JORDAN]);

    let strict = eval("strict", &["--threshold", "0.999999"]);
    let loose = eval("loose", &["--threshold", "0.000001"]);
    assert_eq!(strict[0].2, loose[0].2);
    assert_ne!(strict[0].1, loose[0].1);
}

#[test]
fn sweep_grid_has_one_row_per_cell() {
    let ws = Workspace::new(
        r#"{
            "cascades": 4,
            "graph": {"nodes": 20, "edges": 8},
            "model": {"epochs": 1, "channels": 2, "d_state": 2, "head_hidden": 4, "hgnn_width": 4, "pe_width": 2, "blocks": 1}
        }"#,
    );
    let out = ws.path("sweep");
    ok(&["sweep", "--config", s(&ws.config), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 15);
    let again = ws.path("sweep_again");
    ok(&["sweep", "--config", s(&out.join("config.json")), "--out", s(&again)]);
    assert_eq!(snapshot(&out), snapshot(&again));
}

#[test]
fn single_cell_sweep_matches_eval() {
    let ws = Workspace::new(
        r#"{
            "cascades": 10,
            "graph": {"nodes": 30, "edges": 12},
            "cascade": {"coverage_targets": [0.1, 0.2, 0.30000000000000004]},
            "model": {"epochs": 3, "channels": 4, "d_state": 4, "head_hidden": 8, "hgnn_width": 8, "pe_width": 2},
            "sweep": {"initial_coverages": [0.1], "intervals": [0.1], "seeds": [3]}
        }"#,
    );
    let out = ws.path("sweep");
    ok(&["sweep", "--config", s(&ws.config), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();

    let data = ws.generate("data");
    let run = ws.train(&data, "run");
    let eval = ws.path("eval");
    ok(&["eval", "--config", s(&ws.config), "--seed", "3", "--run", s(&run), "--out", s(&eval)]);
    let (_, f, auc) = method_f_and_auc(&eval.join("report.json")).remove(0);
    assert_eq!(row[3].parse::<f64>().unwrap(), f);
    assert_eq!(row[4].parse::<f64>().unwrap(), auc);
}

#[test]
fn resolved_config_records_derived_seeds() {
    let ws = Workspace::new(SMALL);
    let data = ws.generate("data");
    let written = RunConfig::resolve(Some(&fs::read_to_string(data.join("config.json")).unwrap()), &Overrides::default()).unwrap();
    let expected = RunConfig::resolve(
        Some(SMALL),
        &Overrides {
            seed: Some(3),
            ..Overrides::default()
        },
    )
    .unwrap();
    assert_eq!(written, expected);
}
