//! End-to-end runs of the `subgroupte` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

/// Runs the binary with a whitespace-separated argument line.
fn run(dir: &Path, line: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subgroupte"))
        .current_dir(dir)
        .args(line.split_whitespace())
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, line: &str) {
    let out = run(dir, line);
    assert!(
        out.status.success(),
        "`{line}` failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_data(dir: &Path, name: &str, seed: u64) {
    ok(
        dir,
        &format!("generate --n 200 --treated 100 --seed {seed} --out {name}"),
    );
}

const QUICK_TRAIN: &str = "--k 2 --lr 0.01 --batch 32 --epochs 4 --patience 2 --hidden 8 --seed 3";

#[test]
fn generate_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "a.csv", 7);
    small_data(dir.path(), "b.csv", 7);
    small_data(dir.path(), "c.csv", 8);
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    assert_ne!(a, fs::read(dir.path().join("c.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("id,x0,x1,x2,x3,x4,x5,x6,x7,x8,x9,t,y,y0,y1,te\n"));
    assert_eq!(text.lines().count(), 201);

    let m = json(&dir.path().join("a.csv.manifest.json"));
    assert_eq!(m["command"], "generate");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["n_treated"], 100);
    assert_eq!(m["metrics"]["n_treated"], 100);
}

#[test]
fn generate_accepts_distribution_flags() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        "generate --n 50 --treated 20 --seed 1 --out d.csv --x0-mean -9 --x0-std 0 --noise-var 0",
    );
    let m = json(&dir.path().join("d.csv.manifest.json"));
    assert_eq!(m["metrics"]["ate"], -3.0);
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d, "data.csv", 1);
    ok(
        d,
        &format!("train --data data.csv --out model.ckpt --log train.ndjson {QUICK_TRAIN}"),
    );

    let log = fs::read_to_string(d.join("train.ndjson")).unwrap();
    let records: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!records.is_empty() && records.len() <= 4);
    assert_eq!(records[0]["phase"], "warmup");
    assert_eq!(records[0]["epoch"], 0);

    let manifest = json(&d.join("model.ckpt.manifest.json"));
    assert_eq!(manifest["config"]["k"], 2);
    assert!(manifest["metrics"]["best_val_factual_mse"].as_f64().unwrap() > 0.0);

    ok(
        d,
        "eval --model model.ckpt --data data.csv --out metrics.json --pehe-root",
    );
    let m = json(&d.join("metrics.json"));
    assert_eq!(m["rows"], "test_split");
    assert_eq!(m["n"], 40);
    let pehe = m["pehe"].as_f64().unwrap();
    assert!((m["pehe_root"].as_f64().unwrap() - pehe.sqrt()).abs() < 1e-12);
    assert!(m["eps_ate"].as_f64().unwrap() >= 0.0);
    assert!(m["baseline"]["pehe"].as_f64().unwrap() > 0.0);
    assert!(d.join("metrics.json.manifest.json").exists());

    ok(d, "report --model model.ckpt --data data.csv --out subgroups.json");
    let r = json(&d.join("subgroups.json"));
    assert_eq!(r["summary"]["n"], 200);
    assert_eq!(r["centroids"].as_array().unwrap().len(), 2);
    let assignments = fs::read_to_string(d.join("subgroups.assignments.csv")).unwrap();
    assert_eq!(assignments.lines().next(), Some("id,subgroup,te_pre,te_hat"));
    assert_eq!(assignments.lines().count(), 201);
    let sizes: u64 = r["summary"]["groups"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["n"].as_u64().unwrap_or(0))
        .sum();
    assert_eq!(sizes, 200);
}

#[test]
fn training_is_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d, "data.csv", 2);
    for out in ["a.ckpt", "b.ckpt"] {
        ok(d, &format!("train --data data.csv --out {out} {QUICK_TRAIN}"));
    }
    let a = json(&d.join("a.ckpt"));
    let b = json(&d.join("b.ckpt"));
    assert_eq!(a["params"], b["params"]);
    assert_eq!(a["centroids"], b["centroids"]);
}

#[test]
fn factual_only_data_omits_effect_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d, "data.csv", 4);
    let text = fs::read_to_string(d.join("data.csv")).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| l.split(',').take(13).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(d.join("factual.csv"), stripped).unwrap();

    ok(d, &format!("train --data factual.csv --out model.ckpt {QUICK_TRAIN}"));
    ok(d, "eval --model model.ckpt --data factual.csv --out metrics.json");
    let m = json(&d.join("metrics.json"));
    assert!(m["pehe"].is_null());
    assert!(m["eps_ate"].is_null());
    assert!(m["baseline"].is_null());
    assert!(m["factual_mse"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_on_other_data_uses_all_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d, "train.csv", 5);
    ok(d, "generate --n 120 --treated 60 --seed 6 --out other.csv");
    ok(d, &format!("train --data train.csv --out model.ckpt {QUICK_TRAIN}"));
    ok(d, "eval --model model.ckpt --data other.csv --out metrics.json");
    let m = json(&d.join("metrics.json"));
    assert_eq!(m["rows"], "all");
    assert_eq!(m["n"], 120);
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d, "data.csv", 1);
    fs::write(d.join("bad.csv"), "id,x0,t,y\n1,0.0,0,1.0\n2,0.5,2,1.0\n").unwrap();
    fs::write(d.join("broken.ckpt"), "{\"format_version\": 1, \"net_spec\": ").unwrap();
    let cases = [
        "generate --n 10 --treated 11 --out x.csv",
        "generate --n 10 --out x.csv --noise-var -1",
        "train --data missing.csv --out m.ckpt",
        "train --data data.csv --out m.ckpt --k 0",
        "train --data data.csv --out m.ckpt --lr 0",
        "train --data data.csv --out m.ckpt --k 30",
        "train --data bad.csv --out m.ckpt",
        "eval --model missing.ckpt --data data.csv --out x.json",
        "eval --model broken.ckpt --data data.csv --out x.json",
        "train --data data.csv",
        "no-such-command",
    ];
    for line in cases {
        let out = run(d, line);
        assert_eq!(
            out.status.code(),
            Some(1),
            "`{line}`: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = run(d, "train --data bad.csv --out m.ckpt");
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn numeric_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d, "data.csv", 1);
    let out = run(d, "train --data data.csv --out m.ckpt --lr 1e12 --epochs 3 --hidden 8");
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("m.ckpt").exists());
}

fn sweep_config(dir: &Path, workers: usize) -> String {
    let name = format!("sweep{workers}.json");
    let cfg = serde_json::json!({
        "generate": { "n": 200, "n_treated": 100, "seed": 9, "x0_mean": -9.0, "x0_std": 3.0, "noise_var": 0.1 },
        "train": { "lr": 0.01, "batch_size": 32, "max_epochs": 3, "patience": 2, "hidden_dim": 8, "seed": 11 },
        "grid": { "alpha": [0.0, 1.0], "beta": [1.0], "gamma": [0.5, 1.0], "k": [2] },
        "workers": workers
    });
    fs::write(dir.join(&name), cfg.to_string()).unwrap();
    name
}

#[test]
fn sweep_runs_grid_in_parallel_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let one = sweep_config(d, 1);
    let three = sweep_config(d, 3);
    ok(d, &format!("sweep --config {one} --out serial"));
    ok(d, &format!("sweep --config {three} --out parallel"));

    let a = json(&d.join("serial/results.json"));
    let b = json(&d.join("parallel/results.json"));
    let trials = a["trials"].as_array().unwrap();
    assert_eq!(trials.len(), 4);
    assert_eq!(a["failed"], 0);
    assert_eq!(a["best_trial"], b["best_trial"]);
    for (x, y) in trials.iter().zip(b["trials"].as_array().unwrap()) {
        assert_eq!(x["seed"], y["seed"]);
        assert_eq!(x["best_val_mse"], y["best_val_mse"]);
        assert_eq!(x["test"], y["test"]);
    }
    let seeds: std::collections::HashSet<u64> = trials.iter().map(|t| t["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds.len(), 4);

    for i in 0..4 {
        let trial = d.join(format!("parallel/trial-{i:04}"));
        assert!(trial.join("model.ckpt").exists());
        assert!(trial.join("manifest.json").exists());
    }
    assert!(d.join("parallel/manifest.json").exists());
    let leftovers: Vec<_> = fs::read_dir(d.join("parallel"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn sweep_rejects_out_of_range_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for grid in [
        serde_json::json!({ "alpha": [1.2], "beta": [1.0], "gamma": [1.0], "k": [2] }),
        serde_json::json!({ "alpha": [1.0], "beta": [1.0], "gamma": [1.0], "k": [0] }),
        serde_json::json!({ "alpha": [1.0], "beta": [1.0], "gamma": [1.0], "k": [11] }),
    ] {
        let cfg = serde_json::json!({
            "generate": { "n": 100, "n_treated": 50, "seed": 0, "x0_mean": -9.0, "x0_std": 3.0, "noise_var": 0.1 },
            "grid": grid
        });
        fs::write(d.join("bad.json"), cfg.to_string()).unwrap();
        let out = run(d, "sweep --config bad.json --out o");
        assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    }
    fs::write(d.join("junk.json"), "{ not json").unwrap();
    assert_eq!(run(d, "sweep --config junk.json --out o").status.code(), Some(1));
}
