//! Training-loop contracts: the M-step, the E/M split and `fit`.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subgroup_te::train::{loss_and_backward, Phase};
use subgroup_te::{
    compute_loss, fit, fit_with_observer, generate, m_step, Centroids, Dataset, Error, GenConfig, SubgroupTeModel,
    TrainConfig,
};

fn small_model(k: usize, seed: u64) -> SubgroupTeModel {
    let cfg = TrainConfig {
        k,
        hidden_dim: 12,
        ..Default::default()
    };
    let mut model = SubgroupTeModel::new(cfg.net_spec(4), k, seed).unwrap();
    let mu: Vec<f64> = (0..k).map(|j| -1.0 + j as f64).collect();
    model.centroids = Some(Centroids::new(mu, 0.3).unwrap());
    model
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let x = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0));
    let t = Array1::from_shape_fn(n, |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let y = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
    (x, t, y)
}

fn small_synthetic(seed: u64) -> Dataset {
    generate(&GenConfig {
        n: 200,
        n_treated: 100,
        seed,
        ..Default::default()
    })
    .unwrap()
    .data
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        k: 2,
        lr: 0.01,
        batch_size: 32,
        max_epochs: 6,
        patience: 3,
        hidden_dim: 16,
        seed,
        ..Default::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = small_model(2, 1);
    let (x, t, y) = random_batch(&mut rng, 10);
    let before = model.params.to_tensors();
    let cfg = TrainConfig {
        lr: 0.0,
        ..Default::default()
    };
    let first = m_step(&mut model, x.view(), t.view(), y.view(), &cfg).unwrap();
    assert_eq!(model.params.to_tensors(), before);
    let second = m_step(&mut model, x.view(), t.view(), y.view(), &cfg).unwrap();
    assert_eq!(first, second);
}

#[test]
fn single_sample_step_decreases_its_loss() {
    let cfg = TrainConfig {
        lr: 1e-4,
        ..Default::default()
    };
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let mut model = small_model(3, trial);
        let (x, t, y) = random_batch(&mut rng, 1);
        let before = m_step(&mut model, x.view(), t.view(), y.view(), &cfg).unwrap();
        let out = model.forward_full(x.view()).unwrap();
        let after = compute_loss(&out, t.view(), y.view(), &cfg).unwrap();
        assert!(
            after.total < before.total,
            "trial {trial}: {} -> {}",
            before.total,
            after.total
        );
    }
}

#[test]
fn centroids_are_not_parameters() {
    let cfg = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        gamma: 1.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (x, t, y) = random_batch(&mut rng, 12);
    let mut model = small_model(2, 2);
    assert!(model.params.names().all(|n| !n.contains("centroid")));
    let n_params = model.params.len();

    let base = loss_and_backward(&mut model, x.view(), t.view(), y.view(), &cfg).unwrap();
    let mut shifted = model.clone();
    shifted.centroids = Some(Centroids::new(vec![-0.5, 2.0], 0.3).unwrap());
    shifted.params.zero_grads();
    let moved = loss_and_backward(&mut shifted, x.view(), t.view(), y.view(), &cfg).unwrap();
    assert_ne!(base.total, moved.total);
    assert_eq!(shifted.params.len(), n_params);
}

#[test]
fn e_step_and_m_step_do_not_interfere() {
    let data = small_synthetic(3);
    let cfg = quick_config(3);
    let mut model = SubgroupTeModel::new(cfg.net_spec(data.n_features()), cfg.k, cfg.seed).unwrap();
    let te = model.te_pre(data.x.view()).unwrap().to_vec();
    model.centroids = Some(subgroup_te::init_centroids(&te, 2, 0.1).unwrap());
    let x = data.x.slice(ndarray::s![..32, ..]).to_owned();
    let t = data.t.slice(ndarray::s![..32]).to_owned();
    let y = data.y.slice(ndarray::s![..32]).to_owned();

    for _ in 0..3 {
        let params = model.params.to_tensors();
        let te = model.te_pre(data.x.view()).unwrap().to_vec();
        model.centroids = Some(subgroup_te::e_step(model.centroids().unwrap(), &te).unwrap());
        assert_eq!(model.params.to_tensors(), params, "E-step changed parameters");

        let centroids = model.centroids().unwrap().clone();
        m_step(&mut model, x.view(), t.view(), y.view(), &cfg).unwrap();
        assert_eq!(model.centroids().unwrap(), &centroids, "M-step changed centroids");
        assert_ne!(model.params.to_tensors(), params);
    }
}

#[test]
fn fit_is_bitwise_deterministic() {
    let data = small_synthetic(4);
    let cfg = quick_config(4);
    let a = fit(&data, &cfg).unwrap();
    let b = fit(&data, &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.params.to_tensors(), b.model.params.to_tensors());
    assert_eq!(a.model.centroids, b.model.centroids);

    let c = fit(&data, &TrainConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(a.model.params.to_tensors(), c.model.params.to_tensors());
}

#[test]
fn zero_epochs_returns_initialized_model() {
    let data = small_synthetic(5);
    let cfg = TrainConfig {
        max_epochs: 0,
        ..quick_config(5)
    };
    let r = fit(&data, &cfg).unwrap();
    assert!(r.log.is_empty());
    assert!(r.best_epoch.is_none());
    assert_eq!(r.model.centroids().unwrap().k(), 2);
    assert!(r.best_val_mse.is_finite());
}

#[test]
fn log_records_are_ordered_and_finite() {
    let data = small_synthetic(6);
    let mut seen = Vec::new();
    let r = fit_with_observer(&data, &quick_config(6), |rec| {
        seen.push(rec.epoch);
        Ok(())
    })
    .unwrap();
    assert_eq!(r.log[0].phase, Phase::Warmup);
    assert!(r.log[1..].iter().all(|rec| rec.phase == Phase::Em));
    assert!(seen.windows(2).all(|w| w[1] > w[0]));
    for rec in &r.log {
        assert_eq!(rec.centroids.len(), 2);
        assert!(rec.centroids.windows(2).all(|w| w[0] <= w[1]));
        for v in [
            rec.loss_total,
            rec.loss_propensity,
            rec.loss_pre,
            rec.loss_post,
            rec.val_factual_mse,
        ] {
            assert!(v.is_finite() && v >= 0.0);
        }
    }
}

#[test]
fn early_stopping_returns_best_validation_model() {
    let data = small_synthetic(7);
    let cfg = TrainConfig {
        max_epochs: 15,
        patience: 2,
        lr: 0.05,
        ..quick_config(7)
    };
    let r = fit(&data, &cfg).unwrap();
    let best = r
        .log
        .iter()
        .map(|rec| rec.val_factual_mse)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_val_mse, best);
    let last = r.log.last().unwrap().val_factual_mse;
    assert!(r.best_val_mse <= last);

    let val = data.subset(&r.split.val);
    let recomputed = subgroup_te::train::factual_mse(&r.model, &val).unwrap();
    assert_eq!(recomputed, r.best_val_mse);
}

#[test]
fn too_few_samples_rejected() {
    let data = small_synthetic(8).subset(&(0..25).collect::<Vec<_>>());
    let cfg = TrainConfig {
        k: 3,
        ..quick_config(8)
    };
    assert!(matches!(fit(&data, &cfg), Err(Error::InsufficientData(_))));
}

#[test]
fn non_finite_outcomes_abort_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = small_model(2, 9);
    let (x, t, mut y) = random_batch(&mut rng, 4);
    y[2] = 1e200;
    let cfg = TrainConfig {
        lr: 1e10,
        ..Default::default()
    };
    let err = m_step(&mut model, x.view(), t.view(), y.view(), &cfg).unwrap_err();
    assert!(
        matches!(err, Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_)),
        "{err:?}"
    );
}

#[test]
fn per_batch_e_step_mode_trains() {
    let data = small_synthetic(10);
    let cfg = TrainConfig {
        e_step_mode: subgroup_te::EStepMode::PerBatch,
        ..quick_config(10)
    };
    let r = fit(&data, &cfg).unwrap();
    assert!(r.best_val_mse.is_finite());
    let te = r.model.te_pre(data.x.select(Axis(0), &r.split.test).view()).unwrap();
    assert!(te.iter().all(|v| v.is_finite()));
}
