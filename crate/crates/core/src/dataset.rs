use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed unit: pre-treatment covariates, binary treatment and the
/// factual outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub t: u8,
    pub y: f64,
}

/// Ground truth available for simulated data.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub y0: Array1<f64>,
    pub y1: Array1<f64>,
    /// Expected individual effect `E[Y1 − Y0 | x]`.
    pub te: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    /// Treatment indicators stored as 0.0 / 1.0.
    pub t: Array1<f64>,
    pub y: Array1<f64>,
    pub oracle: Option<Oracle>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, t: Array1<f64>, y: Array1<f64>, oracle: Option<Oracle>) -> Result<Self> {
        let n = x.nrows();
        for len in [t.len(), y.len()] {
            if len != n {
                return Err(Error::LengthMismatch { left: n, right: len });
            }
        }
        if let Some(o) = &oracle {
            for len in [o.y0.len(), o.y1.len(), o.te.len()] {
                if len != n {
                    return Err(Error::LengthMismatch { left: n, right: len });
                }
            }
        }
        if let Some(i) = t.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Parse {
                row: i + 1,
                message: format!("treatment must be 0 or 1, got {}", t[i]),
            });
        }
        if let Some((i, _)) = x
            .rows()
            .into_iter()
            .enumerate()
            .find(|(i, r)| r.iter().any(|v| !v.is_finite()) || !y[*i].is_finite())
        {
            return Err(Error::Parse {
                row: i + 1,
                message: "non-finite value".into(),
            });
        }
        Ok(Dataset { x, t, y, oracle })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&t| t == 1.0).count()
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            x: self.x.row(i).to_vec(),
            t: self.t[i] as u8,
            y: self.y[i],
        }
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            t: self.t.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            oracle: self.oracle.as_ref().map(|o| Oracle {
                y0: o.y0.select(Axis(0), idx),
                y1: o.y1.select(Axis(0), idx),
                te: o.te.select(Axis(0), idx),
            }),
        }
    }

    /// Mean factual outcome of each arm `(control, treated)`; `None` for an
    /// empty arm.
    pub fn arm_means(&self) -> (Option<f64>, Option<f64>) {
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for (&t, &y) in self.t.iter().zip(&self.y) {
            let a = t as usize;
            sums[a] += y;
            counts[a] += 1;
        }
        let mean = |a: usize| (counts[a] > 0).then(|| sums[a] / counts[a] as f64);
        (mean(0), mean(1))
    }
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be in [0,1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Row indices of a seeded random partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(n: usize, fractions: SplitFractions, seed: u64) -> Result<Self> {
        fractions.validate()?;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (fractions.train * n as f64).round() as usize;
        let n_val = ((fractions.val * n as f64).round() as usize).min(n - n_train);
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Ok(Split { train: idx, val, test })
    }
}
