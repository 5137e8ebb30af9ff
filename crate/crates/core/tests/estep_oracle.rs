//! Centroid refresh against a scripted reference and against plain k-means.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subgroup_te::{e_step, Centroids};

#[test]
fn matches_scripted_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let n = rng.random_range(1..=50);
        let k = rng.random_range(1..=4);
        let h = rng.random_range(0.05..2.0);
        let te: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mu: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
        let centroids = Centroids::new(mu.clone(), h).unwrap();
        let got = e_step(&centroids, &te).unwrap();
        let mut sorted = mu.clone();
        sorted.sort_by(f64::total_cmp);
        let expect = common::e_step_oracle(&sorted, h, &te);
        for (g, e) in got.mu().iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-10, "case {case}: {:?} vs {expect:?}", got.mu());
        }
        assert_eq!(got.bandwidth(), h);
    }
}

#[test]
fn tiny_bandwidth_reaches_kmeans_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..10 {
        let h = 1e-3;
        let centers = [-20.0, 0.0, 20.0];
        let mut te = Vec::new();
        for c in centers {
            for _ in 0..15 {
                te.push(c + rng.random_range(-1.0..1.0));
            }
        }
        // Start each centroid near, but not at, its cluster.
        let init: Vec<f64> = centers.iter().map(|c| c + rng.random_range(-3.0..3.0)).collect();
        let kmeans = common::lloyd(&init, &te);

        let mut cur = Centroids::new(init, h).unwrap();
        for _ in 0..5 {
            cur = e_step(&cur, &te).unwrap();
        }
        for (g, e) in cur.mu().iter().zip(&kmeans) {
            assert!((g - e).abs() < 1e-9, "case {case}: {:?} vs {kmeans:?}", cur.mu());
        }
        // A fixed point stays put.
        let again = e_step(&cur, &te).unwrap();
        for (a, b) in again.mu().iter().zip(cur.mu()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn empty_cluster_keeps_shifted_centroid() {
    // Both shifted centroids land on the single mass point; the tie goes to
    // index 0, so cluster 1 is empty and falls back to its shifted value.
    let c = Centroids::new(vec![0.0, 5.0], 1.0).unwrap();
    let te = [2.0, 2.0, 2.0];
    let out = e_step(&c, &te).unwrap();
    assert_eq!(out.mu(), &[2.0, 2.0]);
    assert_eq!(out.mu(), common::e_step_oracle(&[0.0, 5.0], 1.0, &te).as_slice());
}

#[test]
fn documented_trace() {
    let c = Centroids::new(vec![1.0, 9.0], 0.5).unwrap();
    let out = e_step(&c, &[0.0, 0.0, 10.0, 10.0]).unwrap();
    assert_eq!(out.mu(), &[0.0, 10.0]);
}
