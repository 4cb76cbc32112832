//! Error type shared across the library.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes passed to an operation do not line up.
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// An input violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterative numerical routine failed to converge.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A Gram matrix that must be invertible is (numerically) singular.
    #[error("expert {expert}: Gram matrix is singular (min singular value {min_sv:e} <= tolerance {tol:e})")]
    SingularGram {
        expert: usize,
        min_sv: f64,
        tol: f64,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },

    /// An attack hit a non-finite gradient.
    #[error("attack failed on example {example}: non-finite gradient")]
    AttackFailure { example: usize },

    /// Config text could not be parsed.
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    /// File I/O failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failed.
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
