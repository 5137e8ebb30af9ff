//! Fixtures shared by the benchmarks.

use subgroup_te::{generate, init_centroids, Dataset, GenConfig, SubgroupTeModel, TrainConfig};

/// Benchmark dataset and a model with centroids seeded from its initial
/// effect estimates.
pub fn fixture(n: usize, k: usize, use_encoder: bool) -> (Dataset, SubgroupTeModel, TrainConfig) {
    let data = generate(&GenConfig {
        n,
        n_treated: n / 2,
        seed: 0,
        ..Default::default()
    })
    .expect("valid generator config")
    .data;
    let mut cfg = TrainConfig {
        k,
        ..Default::default()
    };
    cfg.encoder.use_encoder = use_encoder;
    let mut model = SubgroupTeModel::new(cfg.net_spec(data.n_features()), k, 0).expect("valid spec");
    let te = model.te_pre(data.x.view()).expect("matching width").to_vec();
    model.centroids = Some(init_centroids(&te, k, 0.1).expect("n >= k"));
    (data, model, cfg)
}
