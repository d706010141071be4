//! Synthetic data, four-way partitioning, hyperparameter pools, and seeded
//! training of filtered shadow and target model populations.

mod dataset;
mod pool;
mod population;
mod store;

pub use dataset::{
    make_synthetic_dataset, normalize_unit_range, partition, sample_rows, ClassShape,
    DatasetBundle, SyntheticSpec,
};
pub use pool::{
    sample_config, Assignment, FixedAssignment, HyperparamPool, InferenceTarget,
};
pub use population::{
    attempt_seed, train_member, train_population, AttemptOutcome, MemberTraining, ModelRecord,
    PopulationSpec, PopulationStats, Role,
};
pub use store::{load_record, parse_kv, save_record, CURVE_FILE, LABEL_FILE, META_FILE, NET_FILE};
