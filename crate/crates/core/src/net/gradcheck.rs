use super::params::ParameterStore;
use crate::error::Result;

/// Central-difference step.
pub const FD_EPSILON: f64 = 1e-5;

/// Gradient magnitudes below this are compared on an absolute scale.
const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: Option<String>,
    pub worst_index: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// `|a − n| / max(|a|, |n|)`, switching to an absolute comparison when both
/// values are smaller than the floor. A sign flip yields 2.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares every parameter's analytic gradient against central finite
/// differences.
///
/// `loss_fn(store, with_grad)` must return the loss at `store`; when
/// `with_grad` is true it must also leave the analytic gradient in the
/// store's gradient buffers (which are zero on entry).
pub fn grad_check<F>(params: &ParameterStore, tolerance: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParameterStore, bool) -> Result<f64>,
{
    let mut analytic_store = params.clone();
    analytic_store.zero_grads();
    loss_fn(&mut analytic_store, true)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: None,
        worst_index: (0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        tolerance,
    };

    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let analytic = analytic_store.grad(name)?.clone();
        let (rows, cols) = analytic.dim();
        for r in 0..rows {
            for c in 0..cols {
                let original = probe.value(name)?[[r, c]];
                probe.value_mut(name)?[[r, c]] = original + FD_EPSILON;
                let plus = loss_fn(&mut probe, false)?;
                probe.value_mut(name)?[[r, c]] = original - FD_EPSILON;
                let minus = loss_fn(&mut probe, false)?;
                probe.value_mut(name)?[[r, c]] = original;

                let numeric = (plus - minus) / (2.0 * FD_EPSILON);
                let err = relative_error(analytic[[r, c]], numeric);
                report.checked += 1;
                if err > report.max_rel_err || report.worst_param.is_none() {
                    report.max_rel_err = err;
                    report.worst_param = Some(name.clone());
                    report.worst_index = (r, c);
                    report.worst_analytic = analytic[[r, c]];
                    report.worst_numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}
