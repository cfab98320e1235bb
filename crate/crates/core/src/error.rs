use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum FglError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration diverged at step {step} (value {value})")]
    Integration { step: usize, value: f64 },

    #[error("non-finite value in {tensor}")]
    Numeric { tensor: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("degenerate range: all values equal {0}")]
    DegenerateRange(f64),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FglError>;

impl FglError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        FglError::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        FglError::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FglError::Io {
            path: path.into(),
            source,
        }
    }
}
