//! Ridge-regression T-learner used as a reference point for the main
//! estimator.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Linear model with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl Ridge {
    /// Solves `(XcᵀXc + λI) w = Xcᵀyc` on centered data, then recovers the
    /// intercept from the means.
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch {
                left: x.nrows(),
                right: y.len(),
            });
        }
        if x.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let x_mean = x.mean_axis(Axis(0)).expect("non-empty");
        let y_mean = y.mean().expect("non-empty");
        let (n, p) = x.dim();
        let xc = DMatrix::from_fn(n, p, |i, j| x[[i, j]] - x_mean[j]);
        let yc = DVector::from_fn(n, |i, _| y[i] - y_mean);

        let mut gram = xc.transpose() * &xc;
        for j in 0..p {
            gram[(j, j)] += lambda;
        }
        let rhs = xc.transpose() * yc;
        let max_diag = (0..p).map(|j| gram[(j, j)]).fold(0.0f64, f64::max);
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("lambda={lambda}, {n} samples, {p} features")))?;
        // Cholesky succeeds on rank-deficient Gram matrices up to rounding.
        let min_pivot = (0..p)
            .map(|j| chol.l_dirty()[(j, j)].powi(2))
            .fold(f64::INFINITY, f64::min);
        if p > 0 && min_pivot <= 1e-12 * max_diag {
            return Err(Error::Singular(format!("lambda={lambda}, pivot {min_pivot:e}")));
        }
        let w = chol.solve(&rhs);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(format!("lambda={lambda}")));
        }
        let coef: Vec<f64> = w.iter().copied().collect();
        let intercept = y_mean - coef.iter().zip(x_mean.iter()).map(|(c, m)| c * m).sum::<f64>();
        Ok(Ridge { coef, intercept })
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.coef.len() {
            return Err(Error::dim("ridge input", self.coef.len(), x.ncols()));
        }
        Ok(x.dot(&Array1::from(self.coef.clone())) + self.intercept)
    }
}

/// Separate ridge models for the control and treated arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLearner {
    pub lambda: f64,
    pub control: Option<Ridge>,
    pub treated: Option<Ridge>,
}

impl TLearner {
    pub fn new(lambda: f64) -> Self {
        TLearner {
            lambda,
            control: None,
            treated: None,
        }
    }

    fn arms(&self) -> Result<(&Ridge, &Ridge)> {
        match (&self.control, &self.treated) {
            (Some(c), Some(t)) => Ok((c, t)),
            _ => Err(Error::State("T-learner is not fitted".into())),
        }
    }

    /// `(ŷ0, ŷ1)` for each row.
    pub fn predict_arms(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let (c, t) = self.arms()?;
        Ok((c.predict(x)?, t.predict(x)?))
    }

    pub fn predict_te(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (y0, y1) = self.predict_arms(x)?;
        Ok(y1 - y0)
    }
}

/// Fits each arm on its factual rows.
pub fn fit_tlearner(data: &Dataset, lambda: f64) -> Result<TLearner> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
    }
    let mut learner = TLearner::new(lambda);
    for arm in [0.0, 1.0] {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| data.t[i] == arm).collect();
        if idx.is_empty() {
            return Err(Error::InsufficientData(format!("treatment arm t={arm} is empty")));
        }
        let x = data.x.select(Axis(0), &idx);
        let y = data.y.select(Axis(0), &idx);
        let model = Ridge::fit(x.view(), y.view(), lambda)?;
        if arm == 0.0 {
            learner.control = Some(model);
        } else {
            learner.treated = Some(model);
        }
    }
    Ok(learner)
}

pub fn predict_te(learner: &TLearner, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    learner.predict_te(x)
}
