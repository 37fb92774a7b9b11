use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("index {index} out of range for {what} of size {bound}")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("window alignment failed: found {found} condition blocks, expected {expected}")]
    Alignment { found: usize, expected: usize },
    #[error("series too short: {frames} frames cannot hold {windows} windows of at least 2 frames")]
    TooShort { frames: usize, windows: usize },
    #[error("regularized covariance is numerically singular (condition estimate {condition:.3e}); increase ridge_scale")]
    Singular { condition: f64 },
    #[error("only {found} frames carry condition {label}; at least 2 are required")]
    InsufficientFrames { label: String, found: usize },
    #[error("edge ({u}, {v}) kept by sparsification has nonpositive weight {weight}")]
    NonpositiveWeight { u: usize, v: usize, weight: f64 },
    #[error("class {class} has {found} subjects, fewer than the {folds} folds requested")]
    Stratification {
        class: usize,
        found: usize,
        folds: usize,
    },
    #[error("AUC undefined: evaluation set contains a single class")]
    AucUndefined,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse category used for process exit codes and C error codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter(_) | Error::Config(_) | Error::Unsupported(_) => ErrorClass::Config,
            Error::Singular { .. } | Error::Numeric(_) | Error::Internal(_) => ErrorClass::Numeric,
            Error::Dimension { .. }
            | Error::Index { .. }
            | Error::Contract(_)
            | Error::Alignment { .. }
            | Error::TooShort { .. }
            | Error::InsufficientFrames { .. }
            | Error::NonpositiveWeight { .. }
            | Error::Stratification { .. }
            | Error::AucUndefined
            | Error::Data(_)
            | Error::Io { .. }
            | Error::Json { .. } => ErrorClass::Data,
        }
    }
}
