//! Error type shared by every module of the crate.

use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:.6e} below tolerance -{tolerance:.6e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("matrix is not positive definite: non-positive pivot at row {row}")]
    NotPositiveDefinite { row: usize },

    #[error("log-density unavailable: {0}")]
    DensityUnavailable(String),

    #[error(
        "pool exhausted: requested {requested} rows from a pool of {available} without replacement"
    )]
    PoolExhausted { requested: usize, available: usize },

    #[error("degenerate bandwidth: pooled points are all identical")]
    DegenerateBandwidth,

    #[error("degenerate distances: all pairwise distances are zero")]
    DegenerateDistances,

    #[error(
        "solver failed to converge: gradient norm {grad_norm:.6e} after {iterations} iterations (tolerance {tolerance:.6e})"
    )]
    SolverFailure {
        grad_norm: f64,
        iterations: usize,
        tolerance: f64,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("insufficient null tests: alpha {alpha} is below the resolution 1/{n_tests}")]
    InsufficientTests { alpha: f64, n_tests: usize },

    #[error("fingerprint mismatch: artifact was built for {expected}, requested {actual}")]
    FingerprintMismatch { expected: String, actual: String },

    #[error("unsupported deformation: {0}")]
    UnsupportedDeformation(String),

    #[error("test evaluation failed on stream {stream_id}: {source}")]
    TestFailure {
        stream_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("bracketing failed: {0}")]
    Bracketing(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Broad category used by callers that map errors to process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidInput(_)
            | Error::InsufficientTests { .. }
            | Error::FingerprintMismatch { .. }
            | Error::UnsupportedDeformation(_)
            | Error::DensityUnavailable(_)
            | Error::PoolExhausted { .. } => ErrorCategory::Usage,
            Error::Io { .. } | Error::Format { .. } => ErrorCategory::Io,
            Error::TestFailure { source, .. } => source.category(),
            _ => ErrorCategory::Numeric,
        }
    }
}

/// Coarse classification of failures, mirrored by the CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Numeric,
    Io,
}
