use std::path::Path;

use serde::Serialize;
use serde_json::json;
use subgroup_te::io::{self, load_checkpoint, save_checkpoint, Checkpoint, NdjsonWriter};
use subgroup_te::train::{BandwidthMode, EStepMode};
use subgroup_te::{
    compare_with_baseline, fit_with_observer, subgroup_report, Comparison, Dataset, GenConfig, Split, TrainConfig,
};

use crate::failure::Failure;
use crate::manifest::{self, Manifest};
use crate::{EStepArg, EvalArgs, GenerateArgs, ReportArgs, TrainArgs};

pub fn load_data(path: &Path, require_oracle: bool) -> Result<Dataset, Failure> {
    if !path.is_file() {
        return Err(Failure::Validation(format!(
            "data file {} does not exist",
            path.display()
        )));
    }
    Ok(io::load_csv(path, require_oracle)?)
}

fn load_model(path: &Path) -> Result<(subgroup_te::SubgroupTeModel, Checkpoint), Failure> {
    if !path.is_file() {
        return Err(Failure::Validation(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(load_checkpoint(path)?)
}

pub fn generate(args: &GenerateArgs, argv: &[String]) -> Result<(), Failure> {
    let cfg = GenConfig {
        n: args.n,
        n_treated: args.treated,
        seed: args.seed,
        x0_mean: args.x0_mean,
        x0_std: args.x0_std,
        noise_var: args.noise_var,
    };
    cfg.validate()?;
    let data = subgroup_te::generate(&cfg)?;
    subgroup_te::synthdata::export(&data, &args.out)?;

    let mut m = Manifest::new("generate", argv, Some(cfg.seed), &cfg)?;
    m.metrics = json!({
        "n": data.data.len(),
        "n_treated": data.data.n_treated(),
        "ate": data.true_te().mean(),
        "beta": data.beta,
    });
    m.outputs.push(args.out.clone());
    m.write(&manifest::path_for(&args.out))
}

pub fn train_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig {
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        k: args.k,
        lr: args.lr,
        batch_size: args.batch,
        max_epochs: args.epochs,
        patience: args.patience,
        hidden_dim: args.hidden,
        seed: args.seed,
        e_step_mode: match args.e_step {
            EStepArg::PerEpoch => EStepMode::PerEpoch,
            EStepArg::PerBatch => EStepMode::PerBatch,
        },
        ..Default::default()
    };
    if let Some(h) = args.bandwidth {
        cfg.bandwidth = BandwidthMode::Fixed(h);
    }
    cfg.encoder.use_encoder = !args.no_encoder;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: &TrainArgs, argv: &[String]) -> Result<(), Failure> {
    let cfg = train_config(args)?;
    let data = load_data(&args.data, false)?;
    let mut log = args.log.as_ref().map(NdjsonWriter::create).transpose()?;
    let result = fit_with_observer(&data, &cfg, |rec| match log.as_mut() {
        Some(w) => w.write(rec),
        None => Ok(()),
    })?;

    let mut ckpt = Checkpoint::from_model(&result.model, &cfg);
    ckpt.best_val_mse = Some(result.best_val_mse);
    ckpt.n_samples = Some(data.len());
    save_checkpoint(&ckpt, &args.out)?;

    let mut m = Manifest::new("train", argv, Some(cfg.seed), &cfg)?;
    m.metrics = json!({
        "best_val_factual_mse": result.best_val_mse,
        "best_epoch": result.best_epoch,
        "epochs_run": result.log.len(),
        "centroids": result.model.centroids()?.mu(),
    });
    m.outputs.push(args.out.clone());
    if let Some(p) = &args.log {
        m.outputs.push(p.clone());
    }
    m.write(&manifest::path_for(&args.out))
}

/// Which rows to fit the baseline on and which to evaluate.
pub struct EvalRows {
    pub label: &'static str,
    pub fit: Vec<usize>,
    pub eval: Vec<usize>,
}

/// The held-out test split when `data` is the training dataset recorded in
/// the checkpoint, otherwise every row.
pub fn evaluation_rows(ckpt: &Checkpoint, data: &Dataset) -> Result<EvalRows, Failure> {
    if ckpt.n_samples == Some(data.len()) {
        let cfg = &ckpt.train_config;
        let split = Split::new(data.len(), cfg.split, cfg.seed)?;
        if !split.test.is_empty() {
            let fit = split.train.iter().chain(&split.val).copied().collect();
            return Ok(EvalRows {
                label: "test_split",
                fit,
                eval: split.test,
            });
        }
    }
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(EvalRows {
        label: "all",
        fit: all.clone(),
        eval: all,
    })
}

#[derive(Serialize)]
struct EvalOutput {
    rows: &'static str,
    n: usize,
    factual_mse: f64,
    pehe: Option<f64>,
    pehe_root: Option<f64>,
    eps_ate: Option<f64>,
    baseline: Option<subgroup_te::Evaluation>,
}

fn eval_output(cmp: Comparison, rows: &'static str, with_root: bool) -> EvalOutput {
    EvalOutput {
        rows,
        n: cmp.model.n,
        factual_mse: cmp.model.factual_mse,
        pehe: cmp.model.pehe,
        pehe_root: if with_root { cmp.model.pehe.map(f64::sqrt) } else { None },
        eps_ate: cmp.model.eps_ate,
        baseline: cmp.baseline,
    }
}

pub fn eval(args: &EvalArgs, argv: &[String]) -> Result<(), Failure> {
    let (model, ckpt) = load_model(&args.model)?;
    let data = load_data(&args.data, false)?;
    let rows = evaluation_rows(&ckpt, &data)?;
    let cmp = compare_with_baseline(&model, &data, &rows.fit, &rows.eval, args.baseline_lambda)?;
    let out = eval_output(cmp, rows.label, args.pehe_root);
    manifest::write_json(&args.out, &out)?;

    let mut m = Manifest::new(
        "eval",
        argv,
        Some(ckpt.seed),
        json!({
            "model": args.model,
            "data": args.data,
            "baseline_lambda": args.baseline_lambda,
            "pehe_root": args.pehe_root,
            "train_config": ckpt.train_config,
        }),
    )?;
    m.metrics = serde_json::to_value(&out)?;
    m.outputs.push(args.out.clone());
    m.write(&manifest::path_for(&args.out))
}

pub fn report(args: &ReportArgs, argv: &[String]) -> Result<(), Failure> {
    let (model, ckpt) = load_model(&args.model)?;
    let data = load_data(&args.data, false)?;
    let rep = subgroup_report(&model, data.x.view())?;

    let assignments = assignments_path(&args.out);
    let mut w = String::from("id,subgroup,te_pre,te_hat\n");
    for (i, ((label, te_pre), te_hat)) in rep.labels.iter().zip(&rep.te_pre).zip(&rep.te_hat).enumerate() {
        w.push_str(&format!(
            "{i},{label},{},{}\n",
            io::format_float(*te_pre),
            io::format_float(*te_hat)
        ));
    }
    io::atomic_write(&assignments, w.as_bytes())?;
    manifest::write_json(
        &args.out,
        &json!({
            "summary": rep.summary,
            "centroids": rep.centroids,
            "assignments": assignments,
        }),
    )?;

    let mut m = Manifest::new(
        "report",
        argv,
        Some(ckpt.seed),
        json!({ "model": args.model, "data": args.data }),
    )?;
    m.metrics = json!({
        "between_variance_ratio": rep.summary.between_variance_ratio,
        "group_sizes": rep.summary.groups.iter().map(|g| g.as_ref().map_or(0, |s| s.n)).collect::<Vec<_>>(),
    });
    m.outputs.push(args.out.clone());
    m.outputs.push(assignments);
    m.write(&manifest::path_for(&args.out))
}

/// `<stem>.assignments.csv` next to the report.
fn assignments_path(out: &Path) -> std::path::PathBuf {
    let stem = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    let mut name = stem;
    name.push(".assignments.csv");
    out.with_file_name(name)
}
