//! Hyperparameter stealing from published scientific plots.
//!
//! The pipeline trains populations of small shadow and target classifiers
//! with randomly drawn hyperparameters, renders t-SNE scatter plots of their
//! penultimate-layer embeddings and plots of their loss curves, and trains an
//! image classifier that maps a plot back to the hyperparameter that produced
//! it. Defenses perturb the plots before publication; adaptive attacks train
//! on defended plots too. A query-based baseline and an FGSM transfer
//! experiment round out the evaluation.

pub mod error;
pub mod nn;
pub mod seed;
pub mod shadow;
pub mod tsne;
pub mod render;
pub mod defense;
pub mod attack;
pub mod adversarial;
pub mod harness;

pub use error::{Error, Result};
