//! EM training: M-steps of SGD on the weighted propensity / pre-subgrouping /
//! post-subgrouping loss, interleaved with E-step centroid refreshes over the
//! training split, with early stopping on validation factual error.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split, SplitFractions};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{ModelOutput, OutputGrads, Standardizer, SubgroupTeModel};
use crate::net::{sgd_update, Activation, EncoderSpec, NetSpec};
use crate::subgroup::{auto_bandwidth, e_step, hard_assign, init_centroids, Assignment, Centroids};

/// Propensity predictions are clamped to this distance from 0 and 1.
pub const PROPENSITY_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "h")]
pub enum BandwidthMode {
    /// A tenth of the standard deviation of the current `te′` batch.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EStepMode {
    /// One E-step on the full training split at the start of each epoch.
    PerEpoch,
    /// One E-step on each mini-batch before its M-step.
    PerBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub hidden_dim: usize,
    pub bandwidth: BandwidthMode,
    pub seed: u64,
    pub split: SplitFractions,
    pub e_step_mode: EStepMode,
    pub encoder: EncoderSpec,
    pub activation: Activation,
    /// Standardize covariates with training-split moments.
    pub standardize: bool,
    /// Start outcome biases at the training-split arm means.
    pub init_outcome_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            k: 3,
            lr: 0.001,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            hidden_dim: 50,
            bandwidth: BandwidthMode::Auto,
            seed: 0,
            split: SplitFractions::default(),
            e_step_mode: EStepMode::PerEpoch,
            encoder: EncoderSpec::default(),
            activation: Activation::Relu,
            standardize: true,
            init_outcome_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be > 0".into()));
        }
        if let BandwidthMode::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("bandwidth must be > 0, got {h}")));
            }
        }
        self.split.validate()?;
        self.net_spec(1).validate()
    }

    pub fn net_spec(&self, input_dim: usize) -> NetSpec {
        NetSpec {
            input_dim,
            hidden_dim: self.hidden_dim,
            encoder: self.encoder.clone(),
            activation: self.activation,
        }
    }

    fn bandwidth_for(&self, te: &[f64]) -> f64 {
        match self.bandwidth {
            BandwidthMode::Auto => auto_bandwidth(te),
            BandwidthMode::Fixed(h) => h,
        }
    }
}

/// Loss value and its unweighted terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Binary cross-entropy of the propensity head.
    pub propensity: f64,
    /// Mean squared factual error before subgrouping.
    pub pre: f64,
    /// Mean squared factual error after subgrouping.
    pub post: f64,
}

fn factual(y0: ArrayView1<f64>, y1: ArrayView1<f64>, t: ArrayView1<f64>) -> Array1<f64> {
    ndarray::Zip::from(&y0)
        .and(&y1)
        .and(&t)
        .map_collect(|&a, &b, &t| t * b + (1.0 - t) * a)
}

fn check_batch(output: &ModelOutput, t: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<usize> {
    let n = output.len();
    for len in [t.len(), y.len()] {
        if len != n {
            return Err(Error::LengthMismatch { left: n, right: len });
        }
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(n)
}

/// `α·BCE(t, t̂) + β·mean((y − ŷ′)²) + γ·mean((y − ŷ)²)` over the factual arm.
pub fn compute_loss(
    output: &ModelOutput,
    t: ArrayView1<f64>,
    y: ArrayView1<f64>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let n = check_batch(output, t, y)? as f64;
    let bce = output
        .t_hat
        .iter()
        .zip(t)
        .map(|(&p, &t)| {
            let p = p.clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n;
    let pre_hat = factual(output.y0_pre.view(), output.y1_pre.view(), t);
    let post_hat = factual(output.y0.view(), output.y1.view(), t);
    let pre = (&y - &pre_hat).mapv(|r| r * r).sum() / n;
    let post = (&y - &post_hat).mapv(|r| r * r).sum() / n;
    let total = cfg.alpha * bce + cfg.beta * pre + cfg.gamma * post;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            propensity: bce,
            pre,
            post,
        });
    }
    Ok(LossBreakdown {
        total,
        propensity: bce,
        pre,
        post,
    })
}

/// Gradient of [`compute_loss`] with respect to every model output.
pub fn loss_grads(
    output: &ModelOutput,
    t: ArrayView1<f64>,
    y: ArrayView1<f64>,
    cfg: &TrainConfig,
) -> Result<OutputGrads> {
    let n = check_batch(output, t, y)?;
    let inv_n = 1.0 / n as f64;
    let mut g = OutputGrads {
        y0_pre: Array1::zeros(n),
        y1_pre: Array1::zeros(n),
        y0: Array1::zeros(n),
        y1: Array1::zeros(n),
        t_hat: Array1::zeros(n),
    };
    for i in 0..n {
        let ti = t[i];
        let p = output.t_hat[i];
        if p > PROPENSITY_CLAMP && p < 1.0 - PROPENSITY_CLAMP {
            g.t_hat[i] = cfg.alpha * inv_n * (-(ti / p) + (1.0 - ti) / (1.0 - p));
        }
        let pre_res = y[i] - (ti * output.y1_pre[i] + (1.0 - ti) * output.y0_pre[i]);
        let post_res = y[i] - (ti * output.y1[i] + (1.0 - ti) * output.y0[i]);
        let d_pre = -2.0 * cfg.beta * inv_n * pre_res;
        let d_post = -2.0 * cfg.gamma * inv_n * post_res;
        g.y1_pre[i] = ti * d_pre;
        g.y0_pre[i] = (1.0 - ti) * d_pre;
        g.y1[i] = ti * d_post;
        g.y0[i] = (1.0 - ti) * d_post;
    }
    Ok(g)
}

/// Loss and parameter gradients for one batch, centroids held fixed.
/// Gradients accumulate into `model.params`.
pub fn loss_and_backward(
    model: &mut SubgroupTeModel,
    x: ArrayView2<f64>,
    t: ArrayView1<f64>,
    y: ArrayView1<f64>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let (output, cache) = model.forward_train(x)?;
    let loss = compute_loss(&output, t, y, cfg)?;
    let grads = loss_grads(&output, t, y, cfg)?;
    model.backward(&output, &cache, &grads)?;
    Ok(loss)
}

/// One SGD step on a batch. Returns the loss before the update.
pub fn m_step(
    model: &mut SubgroupTeModel,
    x: ArrayView2<f64>,
    t: ArrayView1<f64>,
    y: ArrayView1<f64>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    model.params.zero_grads();
    let loss = loss_and_backward(model, x, t, y, cfg)?;
    sgd_update(&mut model.params, cfg.lr)?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Em,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss_total: f64,
    pub loss_propensity: f64,
    pub loss_pre: f64,
    pub loss_post: f64,
    pub val_factual_mse: f64,
    pub centroids: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Model with the lowest validation factual error.
    pub model: SubgroupTeModel,
    pub log: Vec<TrainLogRecord>,
    pub split: Split,
    pub best_val_mse: f64,
    pub best_epoch: Option<usize>,
}

pub fn fit(dataset: &Dataset, cfg: &TrainConfig) -> Result<FitResult> {
    fit_with_observer(dataset, cfg, |_| Ok(()))
}

/// Factual MSE of the post-subgrouping heads.
pub fn factual_mse(model: &SubgroupTeModel, data: &Dataset) -> Result<f64> {
    let out = model.forward_full(data.x.view())?;
    metrics::factual_mse(
        out.y0.as_slice().expect("contiguous"),
        out.y1.as_slice().expect("contiguous"),
        data.t.as_slice().expect("contiguous"),
        data.y.as_slice().expect("contiguous"),
    )
}

fn refresh_centroids(model: &mut SubgroupTeModel, te: &[f64], cfg: &TrainConfig) -> Result<()> {
    let h = cfg.bandwidth_for(te);
    let current = model.centroids()?.clone().with_bandwidth(h)?;
    model.centroids = Some(e_step(&current, te)?);
    Ok(())
}

fn seed_centroids(model: &mut SubgroupTeModel, x: ArrayView2<f64>, cfg: &TrainConfig) -> Result<()> {
    let te = model.te_pre(x)?.to_vec();
    model.centroids = Some(init_centroids(&te, cfg.k, cfg.bandwidth_for(&te))?);
    Ok(())
}

/// [`fit`], calling `observer` with each log record as it is produced.
pub fn fit_with_observer<F>(dataset: &Dataset, cfg: &TrainConfig, mut observer: F) -> Result<FitResult>
where
    F: FnMut(&TrainLogRecord) -> Result<()>,
{
    cfg.validate()?;
    if dataset.len() < 10 * cfg.k {
        return Err(Error::InsufficientData(format!(
            "{} samples for K={} (need at least {})",
            dataset.len(),
            cfg.k,
            10 * cfg.k
        )));
    }
    let split = Split::new(dataset.len(), cfg.split, cfg.seed)?;
    let train = dataset.subset(&split.train);
    if train.len() < cfg.k {
        return Err(Error::InsufficientData("training split smaller than K".into()));
    }
    let val = if split.val.is_empty() {
        train.clone()
    } else {
        dataset.subset(&split.val)
    };

    let mut model = SubgroupTeModel::new(cfg.net_spec(dataset.n_features()), cfg.k, cfg.seed)?;
    if cfg.standardize {
        model.standardizer = Standardizer::fit(train.x.view());
    }
    if cfg.init_outcome_bias {
        let (m0, m1) = train.arm_means();
        let fallback = train.y.mean().unwrap_or(0.0);
        model.set_outcome_bias(m0.unwrap_or(fallback), m1.unwrap_or(fallback))?;
    }
    seed_centroids(&mut model, train.x.view(), cfg)?;

    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_model = model.clone();
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let warmup_cfg = TrainConfig {
        gamma: 0.0,
        ..cfg.clone()
    };
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let phase = if epoch == 0 { Phase::Warmup } else { Phase::Em };
        let step_cfg = match phase {
            Phase::Warmup => &warmup_cfg,
            Phase::Em => cfg,
        };
        if phase == Phase::Em && cfg.e_step_mode == EStepMode::PerEpoch {
            let te = model.te_pre(train.x.view())?.to_vec();
            refresh_centroids(&mut model, &te, cfg)?;
        }

        order.shuffle(&mut rng);
        let mut sums = LossBreakdown {
            total: 0.0,
            propensity: 0.0,
            pre: 0.0,
            post: 0.0,
        };
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.x.select(Axis(0), chunk);
            let t = train.t.select(Axis(0), chunk);
            let y = train.y.select(Axis(0), chunk);
            if phase == Phase::Em && cfg.e_step_mode == EStepMode::PerBatch {
                let te = model.te_pre(x.view())?.to_vec();
                refresh_centroids(&mut model, &te, cfg)?;
            }
            let loss = m_step(&mut model, x.view(), t.view(), y.view(), step_cfg)?;
            sums.total += loss.total;
            sums.propensity += loss.propensity;
            sums.pre += loss.pre;
            sums.post += loss.post;
            batches += 1;
        }
        if phase == Phase::Warmup {
            // te′ from the initial weights carries no signal; reseed now.
            seed_centroids(&mut model, train.x.view(), cfg)?;
        }

        let val_mse = factual_mse(&model, &val)?;
        let b = batches.max(1) as f64;
        let record = TrainLogRecord {
            epoch,
            phase,
            loss_total: sums.total / b,
            loss_propensity: sums.propensity / b,
            loss_pre: sums.pre / b,
            loss_post: sums.post / b,
            val_factual_mse: val_mse,
            centroids: model.centroids()?.mu().to_vec(),
        };
        observer(&record)?;
        log.push(record);

        if val_mse < best_val {
            best_val = val_mse;
            best_model = model.clone();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }

    if best_epoch.is_none() {
        best_val = factual_mse(&best_model, &val)?;
    }
    Ok(FitResult {
        model: best_model,
        log,
        split,
        best_val_mse: best_val,
        best_epoch,
    })
}

/// Metrics on a dataset; effect metrics are `None` without oracle columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub factual_mse: f64,
    pub pehe: Option<f64>,
    pub eps_ate: Option<f64>,
}

/// Evaluates from explicit potential-outcome predictions.
pub fn evaluate_predictions(y0_hat: &[f64], y1_hat: &[f64], data: &Dataset) -> Result<Evaluation> {
    let factual_mse = metrics::factual_mse(
        y0_hat,
        y1_hat,
        data.t.as_slice().expect("contiguous"),
        data.y.as_slice().expect("contiguous"),
    )?;
    let (pehe, eps_ate) = match &data.oracle {
        Some(o) => {
            let te_true = o.te.as_slice().expect("contiguous");
            let te_hat: Vec<f64> = y1_hat.iter().zip(y0_hat).map(|(a, b)| a - b).collect();
            (
                Some(metrics::pehe(&te_hat, te_true)?),
                Some(metrics::eps_ate(y1_hat, y0_hat, te_true)?),
            )
        }
        None => (None, None),
    };
    Ok(Evaluation {
        n: data.len(),
        factual_mse,
        pehe,
        eps_ate,
    })
}

pub fn evaluate(model: &SubgroupTeModel, data: &Dataset) -> Result<Evaluation> {
    let out = model.forward_full(data.x.view())?;
    evaluate_predictions(
        out.y0.as_slice().expect("contiguous"),
        out.y1.as_slice().expect("contiguous"),
        data,
    )
}

/// Model and ridge T-learner metrics on the same evaluation rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model: Evaluation,
    /// Present when the data carries oracle columns.
    pub baseline: Option<Evaluation>,
}

/// Evaluates `model` on rows `eval_idx`; with oracle columns present, also
/// fits the baseline on rows `fit_idx` and evaluates it on the same rows.
pub fn compare_with_baseline(
    model: &SubgroupTeModel,
    data: &Dataset,
    fit_idx: &[usize],
    eval_idx: &[usize],
    lambda: f64,
) -> Result<Comparison> {
    let eval = data.subset(eval_idx);
    let model_eval = evaluate(model, &eval)?;
    let baseline = match data.oracle {
        Some(_) => {
            let learner = crate::baseline::fit_tlearner(&data.subset(fit_idx), lambda)?;
            let (y0, y1) = learner.predict_arms(eval.x.view())?;
            Some(evaluate_predictions(
                y0.as_slice().expect("contiguous"),
                y1.as_slice().expect("contiguous"),
                &eval,
            )?)
        }
        None => None,
    };
    Ok(Comparison {
        model: model_eval,
        baseline,
    })
}

/// Per-sample subgroup membership and the effect distribution per subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub summary: metrics::SubgroupSummary,
    pub centroids: Vec<f64>,
    /// Most probable subgroup of each sample, i.e. its nearest centroid.
    pub labels: Vec<usize>,
    /// Pre-subgrouping effect used for the assignment.
    pub te_pre: Vec<f64>,
    /// Final effect estimate `ŷ1 − ŷ0`.
    pub te_hat: Vec<f64>,
}

pub fn subgroup_report(model: &SubgroupTeModel, x: ArrayView2<f64>) -> Result<SubgroupReport> {
    let out = model.forward_full(x)?;
    let centroids = model.centroids()?;
    let te_pre = out.te_pre.to_vec();
    let te_hat = out.te().to_vec();
    let assignment: Assignment = hard_assign(&te_pre, centroids.mu());
    let summary = metrics::subgroup_summary(&te_hat, &assignment, centroids.k())?;
    Ok(SubgroupReport {
        summary,
        centroids: centroids.mu().to_vec(),
        labels: assignment.labels,
        te_pre,
        te_hat,
    })
}

/// Copy of `model` carrying the given centroids, for callers that manage
/// the E-step themselves.
pub fn with_centroids(model: &SubgroupTeModel, centroids: Centroids) -> SubgroupTeModel {
    let mut m = model.clone();
    m.centroids = Some(centroids);
    m
}
