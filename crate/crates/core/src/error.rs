use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("perplexity {target} unreachable for row {row} (achievable range {lo:.4}..{hi:.4})")]
    PerplexityUnreachable {
        row: usize,
        target: f64,
        lo: f64,
        hi: f64,
    },

    #[error("retry budget exhausted after {attempts} attempts; failing configs: {failing:?}")]
    RetryBudgetExhausted {
        attempts: usize,
        failing: Vec<String>,
    },

    #[error("fixed setting leaves {classes} class(es) represented; need at least 2")]
    DegenerateSetting { classes: usize },

    #[error("target-model plot {0} found in attack training data")]
    Leakage(String),

    #[error("config validation failed:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("corrupt artifact {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png encoding: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("png decoding: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
