use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular matrix: eigenvalue {eigenvalue:e} below tolerance {tolerance:e}")]
    Singular { eigenvalue: f64, tolerance: f64 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("non-finite {quantity} at step {step}")]
    NumericAbort {
        step: u64,
        quantity: String,
        /// JSON snapshot of the offending batch.
        snapshot: String,
    },

    #[error("optimization failed: {reason}")]
    OptimizationFailure { reason: String, trace: Vec<f64> },

    #[error("item {index}: {source}")]
    Item {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Tags an error with the index of the input it concerns.
    pub fn at(self, index: usize) -> Self {
        Error::Item {
            index,
            source: Box::new(self),
        }
    }

    /// The innermost error, past any item tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Item { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
