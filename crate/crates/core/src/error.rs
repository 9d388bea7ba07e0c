//! Error type shared by every estimator and the data pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PseError>;

#[derive(Debug, Error)]
pub enum PseError {
    #[error("matrix is singular: pivot {pivot:e} below threshold {threshold:e}")]
    SingularMatrix { pivot: f64, threshold: f64 },

    #[error("maximizer did not converge within {iterations} iterations (gradient norm {gradient_norm:e})")]
    MaxIterationsExceeded { iterations: usize, gradient_norm: f64 },

    #[error("objective is not finite: {0}")]
    NonFiniteObjective(String),

    #[error("invalid range: lo = {lo}, hi = {hi}")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("point {x} outside support [{lo}, {hi}]")]
    OutOfSupport { x: f64, lo: f64, hi: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid value at line {line}: {message}")]
    Value { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PseError {
    pub(crate) fn dims(what: &'static str, expected: usize, got: usize) -> Self {
        PseError::DimensionMismatch {
            what,
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PseError::Io {
            path: path.into(),
            source,
        }
    }
}
