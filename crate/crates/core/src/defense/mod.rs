//! Plot-publishing defenses: perturbations of t-SNE embeddings or
//! coordinates, and smoothing or noising of loss curves.

mod loss;
mod tsne;

pub use loss::{
    l2_utility, sliding_series, smooth_gaussian, smooth_sliding, smooth_tensorboard,
    tensorboard_series, LossDefense,
};
pub use tsne::{
    noise_coordinates, noise_embeddings, round_coordinates, round_embeddings,
    threshold_embeddings, RoundingUnit, TsneDefense,
};
