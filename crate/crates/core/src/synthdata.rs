//! Simulated randomized trial with a logistic time covariate and known
//! potential outcomes.
//!
//! Covariate `x0` is a time-to-treatment variable; `x1..x9` are standard
//! normal. With `s = 1 / (1 + exp(−(x0 + 9)))`:
//!
//! ```text
//! Y0 ~ N(x₋₀·β + s + 5, σ²)
//! Y1 ~ N(x₋₀·β + 5s,    σ²)
//! ```
//!
//! so the expected effect `4s − 5` depends on `x0` alone and lies in
//! `(−5, −1)`.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Oracle};
use crate::error::{Error, Result};

pub const N_COVARIATES: usize = 10;
pub const N_COEFFICIENTS: usize = N_COVARIATES - 1;

/// Support and probabilities of each outcome coefficient.
pub const COEFFICIENT_VALUES: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
pub const COEFFICIENT_PROBS: [f64; 5] = [0.6, 0.1, 0.1, 0.1, 0.1];

// Independent RNG streams derived from one seed.
const STREAM_COEFFICIENTS: u64 = 0;
const STREAM_COVARIATES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_TREATMENT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub n_treated: usize,
    pub seed: u64,
    pub x0_mean: f64,
    pub x0_std: f64,
    /// Outcome noise variance; zero gives noiseless outcomes.
    pub noise_var: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 1000,
            n_treated: 500,
            seed: 0,
            x0_mean: -9.0,
            x0_std: 3.0,
            noise_var: 0.1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be > 0".into()));
        }
        if self.n_treated > self.n {
            return Err(Error::Config(format!(
                "n_treated ({}) exceeds n ({})",
                self.n_treated, self.n
            )));
        }
        if !(self.x0_std >= 0.0 && self.x0_std.is_finite() && self.x0_mean.is_finite()) {
            return Err(Error::Config(
                "x0 distribution parameters must be finite, std >= 0".into(),
            ));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::Config(format!("noise_var must be >= 0, got {}", self.noise_var)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// Factual data with oracle columns populated.
    pub data: Dataset,
    pub beta: [f64; N_COEFFICIENTS],
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn true_te(&self) -> &Array1<f64> {
        &self.oracle().te
    }

    pub fn oracle(&self) -> &Oracle {
        self.data.oracle.as_ref().expect("synthetic data carries an oracle")
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn logistic_time(x0: f64) -> f64 {
    1.0 / (1.0 + (-(x0 + 9.0)).exp())
}

fn draw_coefficient<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, p) in COEFFICIENT_VALUES.iter().zip(COEFFICIENT_PROBS) {
        acc += p;
        if u < acc {
            return *v;
        }
    }
    COEFFICIENT_VALUES[COEFFICIENT_VALUES.len() - 1]
}

/// Outcome coefficients for `x1..x9`; deterministic per seed.
pub fn sample_coefficients(seed: u64) -> [f64; N_COEFFICIENTS] {
    let mut rng = rng_stream(seed, STREAM_COEFFICIENTS);
    std::array::from_fn(|_| draw_coefficient(&mut rng))
}

pub fn generate(cfg: &GenConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let n = cfg.n;
    let beta = sample_coefficients(cfg.seed);

    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut rng = rng_stream(cfg.seed, STREAM_COVARIATES);
    let mut x = Array2::<f64>::zeros((n, N_COVARIATES));
    for mut row in x.rows_mut() {
        row[0] = cfg.x0_mean + cfg.x0_std * std_normal.sample(&mut rng);
        for v in row.iter_mut().skip(1) {
            *v = std_normal.sample(&mut rng);
        }
    }

    let noise_sd = cfg.noise_var.sqrt();
    let mut noise_rng = rng_stream(cfg.seed, STREAM_NOISE);
    let mut y0 = Array1::zeros(n);
    let mut y1 = Array1::zeros(n);
    let mut te = Array1::zeros(n);
    for (i, row) in x.rows().into_iter().enumerate() {
        let linear: f64 = row.iter().skip(1).zip(&beta).map(|(x, b)| x * b).sum();
        let s = logistic_time(row[0]);
        let mu0 = linear + s + 5.0;
        let mu1 = linear + 5.0 * s;
        y0[i] = mu0 + noise_sd * std_normal.sample(&mut noise_rng);
        y1[i] = mu1 + noise_sd * std_normal.sample(&mut noise_rng);
        te[i] = 4.0 * s - 5.0;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_stream(cfg.seed, STREAM_TREATMENT));
    let mut t = Array1::zeros(n);
    for &i in &order[..cfg.n_treated] {
        t[i] = 1.0;
    }
    let y = Array1::from_shape_fn(n, |i| if t[i] == 1.0 { y1[i] } else { y0[i] });

    let data = Dataset::new(x, t, y, Some(Oracle { y0, y1, te }))?;
    Ok(SyntheticDataset {
        data,
        beta,
        seed: cfg.seed,
    })
}

/// Writes the dataset, oracle columns included, as CSV.
pub fn export(dataset: &SyntheticDataset, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_csv(&dataset.data, path)
}
