//! Grid search over loss weights and subgroup count, trials spread over
//! worker threads.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;
use subgroup_te::io::{save_checkpoint, Checkpoint};
use subgroup_te::{compare_with_baseline, fit, Comparison, Dataset, GenConfig, TrainConfig};

use crate::commands::load_data;
use crate::failure::Failure;
use crate::manifest::{self, Manifest};
use crate::SweepArgs;

const MAX_K: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub k: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// CSV dataset; paths are resolved against the working directory.
    #[serde(default)]
    pub data_path: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GenConfig>,
    /// Settings shared by every trial; grid values override its weights and K.
    #[serde(default)]
    pub train: TrainConfig,
    pub grid: Grid,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_lambda")]
    pub baseline_lambda: f64,
}

fn default_lambda() -> f64 {
    1.0
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        let invalid = |m: String| Err(Failure::Validation(m));
        if self.data_path.is_some() == self.generate.is_some() {
            return invalid("exactly one of `data_path` or `generate` must be set".into());
        }
        for (name, values) in [
            ("alpha", &self.grid.alpha),
            ("beta", &self.grid.beta),
            ("gamma", &self.grid.gamma),
        ] {
            if values.is_empty() {
                return invalid(format!("grid.{name} is empty"));
            }
            if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return invalid(format!("grid.{name} value {v} outside [0, 1]"));
            }
        }
        if self.grid.k.is_empty() {
            return invalid("grid.k is empty".into());
        }
        if let Some(k) = self.grid.k.iter().find(|&&k| !(1..=MAX_K).contains(&k)) {
            return invalid(format!("grid.k value {k} outside [1, {MAX_K}]"));
        }
        if self.workers == Some(0) {
            return invalid("workers must be >= 1".into());
        }
        if self.baseline_lambda.is_nan() || self.baseline_lambda <= 0.0 {
            return invalid(format!("baseline_lambda must be > 0, got {}", self.baseline_lambda));
        }
        if let Some(g) = &self.generate {
            g.validate()?;
        }
        self.train.validate()?;
        Ok(())
    }

    /// Every grid point in a fixed order, each with its derived seed.
    pub fn trials(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &alpha in &self.grid.alpha {
            for &beta in &self.grid.beta {
                for &gamma in &self.grid.gamma {
                    for &k in &self.grid.k {
                        let index = out.len() as u64;
                        out.push(TrainConfig {
                            alpha,
                            beta,
                            gamma,
                            k,
                            seed: derive_seed(self.train.seed, index),
                            ..self.train.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

/// SplitMix64 of `base + index`: distinct, well-mixed seeds per trial.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: usize,
    pub seed: u64,
    pub status: &'static str,
    pub error: Option<String>,
    pub best_val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub test: Option<Comparison>,
    pub dir: PathBuf,
}

fn run_trial(index: usize, cfg: &TrainConfig, data: &Dataset, lambda: f64, dir: &Path) -> TrialResult {
    let mut result = TrialResult {
        index,
        alpha: cfg.alpha,
        beta: cfg.beta,
        gamma: cfg.gamma,
        k: cfg.k,
        seed: cfg.seed,
        status: "ok",
        error: None,
        best_val_mse: None,
        best_epoch: None,
        test: None,
        dir: dir.to_path_buf(),
    };
    let outcome = (|| -> Result<(), Failure> {
        let r = fit(data, cfg)?;
        let fit_idx: Vec<usize> = r.split.train.iter().chain(&r.split.val).copied().collect();
        let cmp = if r.split.test.is_empty() {
            None
        } else {
            Some(compare_with_baseline(&r.model, data, &fit_idx, &r.split.test, lambda)?)
        };
        let mut ckpt = Checkpoint::from_model(&r.model, cfg);
        ckpt.best_val_mse = Some(r.best_val_mse);
        ckpt.n_samples = Some(data.len());
        save_checkpoint(&ckpt, dir.join("model.ckpt"))?;
        result.best_val_mse = Some(r.best_val_mse);
        result.best_epoch = r.best_epoch;
        result.test = cmp;
        Ok(())
    })();
    if let Err(e) = outcome {
        result.status = "failed";
        result.error = Some(e.to_string());
    }
    result
}

pub fn run(args: &SweepArgs, argv: &[String]) -> Result<(), Failure> {
    if !args.config.is_file() {
        return Err(Failure::Validation(format!(
            "config {} does not exist",
            args.config.display()
        )));
    }
    let text = std::fs::read_to_string(&args.config)?;
    let cfg: SweepConfig =
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("sweep config: {e}")))?;
    cfg.validate()?;
    let data = match (&cfg.data_path, &cfg.generate) {
        (Some(p), _) => load_data(p, false)?,
        (_, Some(g)) => subgroup_te::generate(g)?.data,
        _ => unreachable!("validated"),
    };
    std::fs::create_dir_all(&args.out)?;

    let trials = cfg.trials();
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(trials.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<TrialResult>>> = Mutex::new(vec![None; trials.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(trial) = trials.get(i) else { break };
                let dir = args.out.join(format!("trial-{i:04}"));
                let r = run_trial(i, trial, &data, cfg.baseline_lambda, &dir);
                let mut m = Manifest::new("sweep-trial", argv, Some(trial.seed), trial).expect("serializable config");
                m.metrics = serde_json::to_value(&r).expect("serializable result");
                if r.status == "ok" {
                    m.outputs.push(dir.join("model.ckpt"));
                }
                let written = m.write(&dir.join("manifest.json"));
                let mut r = r;
                if let Err(e) = written {
                    r.status = "failed";
                    r.error = Some(e.to_string());
                }
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let results: Vec<TrialResult> = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every trial ran"))
        .collect();

    // Selection uses validation error only; test metrics are reported.
    let best = results
        .iter()
        .filter_map(|r| r.best_val_mse.map(|v| (v, r.index)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, i)| i);
    let failed = results.iter().filter(|r| r.status != "ok").count();
    let summary = json!({
        "trials": results,
        "best_trial": best,
        "failed": failed,
    });
    manifest::write_json(&args.out.join("results.json"), &summary)?;

    let mut m = Manifest::new("sweep", argv, Some(cfg.train.seed), &cfg)?;
    m.metrics = json!({ "best_trial": best, "n_trials": results.len(), "failed": failed });
    m.outputs.push(args.out.join("results.json"));
    m.write(&args.out.join("manifest.json"))?;

    if best.is_none() {
        return Err(Failure::Runtime(format!("all {} trials failed", results.len())));
    }
    Ok(())
}
