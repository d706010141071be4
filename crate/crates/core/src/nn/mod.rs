//! Dense linear algebra, feedforward classifiers with hand-written
//! backpropagation, SGD/Adam, and the seeded mini-batch training loop.

mod data;
mod matrix;
mod net;
mod optim;
mod train;

pub use data::LabeledSet;
pub use matrix::{dot, population_std, squared_distance, Matrix};
pub use net::{
    argmax, cross_entropy, softmax_rows, ActivationKind, Dense, FeedforwardNet, ForwardPass,
    Gradients, LOG_CLAMP,
};
pub use optim::{OptimizerKind, OptimizerState};
pub use train::{
    evaluate_loss, recording_windows, train, LossCurve, TrainConfig, Trainer,
    TRAIN_POINTS_PER_EPOCH,
};
