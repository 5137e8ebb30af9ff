//! E-step machinery over the one-dimensional space of pre-subgrouping
//! treatment effects: Gaussian-kernel centroid re-alignment, hard
//! assignment, batch centroid update with empty-cluster fallback, and
//! quantile initialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bandwidth used when the batch spread is degenerate.
const MIN_BANDWIDTH: f64 = 1e-8;

/// `K` scalar cluster centers, kept sorted ascending, plus the KDE bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    mu: Vec<f64>,
    h: f64,
}

impl Centroids {
    pub fn new(mut mu: Vec<f64>, h: f64) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::Config("at least one centroid is required".into()));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("centroids must be finite".into()));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
        }
        mu.sort_by(f64::total_cmp);
        Ok(Centroids { mu, h })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn with_bandwidth(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
        }
        self.h = h;
        Ok(self)
    }
}

/// Hard cluster labels, one per sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<usize>,
}

impl Assignment {
    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Normalized Gaussian kernel weights of every sample around `center`.
pub fn kernel_weights(center: f64, te: &[f64], h: f64) -> Vec<f64> {
    let logits: Vec<f64> = te
        .iter()
        .map(|&x| {
            let u = (x - center) / h;
            -0.5 * u * u
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Shifts each centroid by the kernel-weighted mean offset of the batch,
/// `μ*_k = μ_k + Σ_i w_ik (te_i − μ_k)`.
pub fn kde_adjust(centroids: &Centroids, te: &[f64]) -> Result<Vec<f64>> {
    if te.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(centroids
        .mu
        .iter()
        .map(|&mu| {
            let w = kernel_weights(mu, te, centroids.h);
            let diff: f64 = w.iter().zip(te).map(|(w, x)| w * (x - mu)).sum();
            mu + diff
        })
        .collect())
}

/// Nearest-centroid labels; ties go to the lowest index.
pub fn hard_assign(te: &[f64], mu_star: &[f64]) -> Assignment {
    let labels = te
        .iter()
        .map(|&x| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, &m) in mu_star.iter().enumerate() {
                let d = (x - m).abs();
                if d < best_d {
                    best = k;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    Assignment { labels }
}

/// Cluster means of the assigned samples; an empty cluster keeps its
/// adjusted position `μ*_k`. The result is re-sorted ascending.
pub fn update_centroids(te: &[f64], assignment: &Assignment, mu_star: &[f64], h: f64) -> Result<Centroids> {
    if te.len() != assignment.labels.len() {
        return Err(Error::LengthMismatch {
            left: te.len(),
            right: assignment.labels.len(),
        });
    }
    let k = mu_star.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&x, &l) in te.iter().zip(&assignment.labels) {
        if l >= k {
            return Err(Error::Contract(format!("label {l} out of range for K={k}")));
        }
        sums[l] += x;
        counts[l] += 1;
    }
    let mu = (0..k)
        .map(|j| {
            if counts[j] > 0 {
                sums[j] / counts[j] as f64
            } else {
                mu_star[j]
            }
        })
        .collect();
    Centroids::new(mu, h)
}

/// One full E-step: kernel re-alignment, hard assignment, centroid update.
pub fn e_step(centroids: &Centroids, te: &[f64]) -> Result<Centroids> {
    let mu_star = kde_adjust(centroids, te)?;
    let assignment = hard_assign(te, &mu_star);
    update_centroids(te, &assignment, &mu_star, centroids.h)
}

/// Linear-interpolation quantile of an ascending slice at `q ∈ [0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// `K`-quantile initialization: `μ_k` is the empirical quantile at
/// `(k + 0.5) / K`. Deterministic in its input.
pub fn init_centroids(te: &[f64], k: usize, h: f64) -> Result<Centroids> {
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    if te.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot seed {k} centroids",
            te.len()
        )));
    }
    let mut sorted = te.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mu = (0..k)
        .map(|j| quantile_sorted(&sorted, (j as f64 + 0.5) / k as f64))
        .collect();
    Centroids::new(mu, h)
}

/// Default bandwidth: a tenth of the batch standard deviation.
pub fn auto_bandwidth(te: &[f64]) -> f64 {
    let n = te.len() as f64;
    if te.is_empty() {
        return MIN_BANDWIDTH;
    }
    let mean = te.iter().sum::<f64>() / n;
    let var = te.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (0.1 * var.sqrt()).max(MIN_BANDWIDTH)
}
