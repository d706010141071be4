//! Labeled plot datasets, the attack classifier, adaptive training and the
//! query-based baseline.

mod dataset;
mod model;
mod query;

pub use dataset::{
    build_attack_dataset, prepare_raster, AttackDataset, AttackSample, PlotKind, Provenance, Setting,
};
pub use model::{
    adaptive_train, check_no_target_plots, evaluate, split_by_model, train_attack_model,
    AttackModel, AttackModelConfig, ConfusionMatrix,
};
pub use query::{query_baseline, query_features, select_query_set, QueryAttackConfig, QueryMode};
