use super::params::ParameterStore;
use crate::error::{Error, Result};

/// Plain SGD step `w ← w − lr·∂L/∂w`, then zeroes every gradient buffer.
///
/// All gradients are checked before any value changes, so a non-finite
/// gradient leaves the store untouched.
pub fn sgd_update(params: &mut ParameterStore, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    if let Some((name, _)) = params.iter().find(|(_, p)| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    for (_, p) in params.iter_mut() {
        p.value.scaled_add(-lr, &p.grad);
        p.grad.fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_store(w: f64, g: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", array![[w]]);
        s.accumulate_grad("w", &array![[g]]).unwrap();
        s
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut s = scalar_store(1.5, 3.0);
        let before = s.value("w").unwrap().clone();
        sgd_update(&mut s, 0.0).unwrap();
        assert_eq!(s.value("w").unwrap(), &before);
        assert_eq!(s.grad("w").unwrap()[[0, 0]], 0.0);
    }

    #[test]
    fn one_step() {
        let mut s = scalar_store(1.0, 2.0);
        sgd_update(&mut s, 0.1).unwrap();
        assert!((s.value("w").unwrap()[[0, 0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn consecutive_updates_follow_scalar_trace() {
        // w0 = 2, g1 = 0.5, g2 = -1.5, lr = 0.2 → w1 = 1.9, w2 = 2.2
        let mut s = scalar_store(2.0, 0.5);
        sgd_update(&mut s, 0.2).unwrap();
        assert_eq!(s.grad("w").unwrap()[[0, 0]], 0.0);
        s.accumulate_grad("w", &array![[-1.5]]).unwrap();
        sgd_update(&mut s, 0.2).unwrap();
        let w = s.value("w").unwrap()[[0, 0]];
        let trace = 2.0 - 0.2 * 0.5 - 0.2 * -1.5;
        assert!((w - trace).abs() < 1e-15);
        assert!((w - 2.2).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_aborts() {
        let mut s = scalar_store(1.0, f64::NAN);
        s.insert("a", array![[3.0]]);
        match sgd_update(&mut s, 0.1) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.value("w").unwrap()[[0, 0]], 1.0);
    }
}
