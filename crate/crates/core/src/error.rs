//! Error type shared by every stage of the identification pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument or configuration value is out of range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Simulated state left the finite range.
    #[error("non-finite state in path {path} at time index {time_index} (t = {time})")]
    NonFiniteState {
        time_index: usize,
        path: usize,
        time: f64,
    },

    #[error("gram matrix is singular after maximal jitter {jitter:e} (condition estimate {condition:e})")]
    SingularGram { jitter: f64, condition: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        artifacts: Vec<PathBuf>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) => 2,
            Error::BudgetExceeded(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
