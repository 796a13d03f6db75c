//! Small feedforward networks trained with Adam: per-cell coverage models and
//! the MR fingerprint locator.

mod coverage;
pub mod io;
mod locator;
mod mlp;
mod train;

pub use coverage::{coverage_model, CoverageModel, CoverageParams};
pub use locator::{group_reports, locator_train, Fingerprint, Locator, LocatorParams, Report};
pub use mlp::{Activation, Gradients, Layer, Mlp, MlpSpec, Normalizer};
pub use train::{train, Dataset, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty training set")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("invalid model file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
