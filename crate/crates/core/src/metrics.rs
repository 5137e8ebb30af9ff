//! Treatment-effect metrics and per-subgroup distribution summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subgroup::{quantile_sorted, Assignment};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Precision in estimating heterogeneous effects, in squared form:
/// `(1/N) Σ (te_hat − te_true)²`.
pub fn pehe(te_hat: &[f64], te_true: &[f64]) -> Result<f64> {
    check_lengths(te_hat.len(), te_true.len())?;
    Ok(te_hat.iter().zip(te_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / te_hat.len() as f64)
}

/// Root form of [`pehe`], for comparison with work that reports it.
pub fn pehe_root(te_hat: &[f64], te_true: &[f64]) -> Result<f64> {
    pehe(te_hat, te_true).map(f64::sqrt)
}

/// Absolute error of the average effect `|mean(ŷ1 − ŷ0) − mean(te_true)|`.
pub fn eps_ate(y1_hat: &[f64], y0_hat: &[f64], te_true: &[f64]) -> Result<f64> {
    check_lengths(y1_hat.len(), y0_hat.len())?;
    check_lengths(y1_hat.len(), te_true.len())?;
    let ate_hat = y1_hat.iter().zip(y0_hat).map(|(a, b)| a - b).sum::<f64>() / y1_hat.len() as f64;
    Ok((ate_hat - mean(te_true)).abs())
}

/// Mean squared error of the factual-arm prediction.
pub fn factual_mse(y0_hat: &[f64], y1_hat: &[f64], t: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(y0_hat.len(), y1_hat.len())?;
    check_lengths(t.len(), y.len())?;
    check_lengths(y0_hat.len(), y.len())?;
    Ok(y0_hat
        .iter()
        .zip(y1_hat)
        .zip(t.iter().zip(y))
        .map(|((a, b), (t, y))| (y - (t * b + (1.0 - t) * a)).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}

/// Boxplot statistics of estimated effects in one subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupStats {
    pub n: usize,
    pub mean_te: f64,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSummary {
    /// One entry per subgroup; `None` when the subgroup is empty.
    pub groups: Vec<Option<SubgroupStats>>,
    /// Weighted variance of subgroup means over total variance, in `[0, 1]`.
    pub between_variance_ratio: f64,
    pub n: usize,
}

pub fn subgroup_summary(te_hat: &[f64], assignment: &Assignment, k: usize) -> Result<SubgroupSummary> {
    check_lengths(te_hat.len(), assignment.labels.len())?;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (&te, &l) in te_hat.iter().zip(&assignment.labels) {
        if l >= k {
            return Err(Error::Contract(format!("label {l} out of range for K={k}")));
        }
        members[l].push(te);
    }

    let n = te_hat.len() as f64;
    let grand = mean(te_hat);
    let total_var = te_hat.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / n;
    let mut between = 0.0;
    let groups = members
        .into_iter()
        .map(|mut g| {
            if g.is_empty() {
                return None;
            }
            g.sort_by(f64::total_cmp);
            let m = mean(&g);
            between += g.len() as f64 / n * (m - grand).powi(2);
            Some(SubgroupStats {
                n: g.len(),
                mean_te: m,
                p5: quantile_sorted(&g, 0.05),
                p25: quantile_sorted(&g, 0.25),
                p50: quantile_sorted(&g, 0.50),
                p75: quantile_sorted(&g, 0.75),
                p95: quantile_sorted(&g, 0.95),
            })
        })
        .collect();
    let ratio = if total_var > 0.0 {
        (between / total_var).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(SubgroupSummary {
        groups,
        between_variance_ratio: ratio,
        n: te_hat.len(),
    })
}
