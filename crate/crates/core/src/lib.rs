//! Joint subgroup identification and treatment-effect estimation.
//!
//! A covariate representation feeds two linear pre-estimation heads whose
//! difference `te′` is softly assigned to `K` one-dimensional centroids. The
//! membership vector is concatenated with the representation and fed to
//! outcome and propensity heads. Training alternates centroid refreshes
//! (kernel re-alignment then k-means update) with SGD on the network.
//!
//! The crate also ships the simulated benchmark, effect metrics, a ridge
//! T-learner baseline and the persistence formats used by the CLI.

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod net;
pub mod subgroup;
pub mod synthdata;
pub mod train;

pub use baseline::{fit_tlearner, Ridge, TLearner};
pub use dataset::{Dataset, Oracle, Sample, Split, SplitFractions};
pub use error::{Error, Result};
pub use metrics::{eps_ate, pehe, subgroup_summary, SubgroupStats, SubgroupSummary};
pub use model::{subgroup_probs, ModelOutput, Standardizer, SubgroupTeModel};
pub use net::{NetSpec, ParameterStore};
pub use subgroup::{e_step, hard_assign, init_centroids, kde_adjust, update_centroids, Assignment, Centroids};
pub use synthdata::{generate, GenConfig, SyntheticDataset};
pub use train::{
    compare_with_baseline, compute_loss, evaluate, fit, fit_with_observer, m_step, subgroup_report, BandwidthMode,
    Comparison, EStepMode, Evaluation, FitResult, LossBreakdown, SubgroupReport, TrainConfig, TrainLogRecord,
};
