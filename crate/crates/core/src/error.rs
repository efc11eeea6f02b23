//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by numerics, environments, models, agents and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Cholesky factorization failed even after the jitter ladder.
    #[error("matrix of size {n} is not positive definite after {attempts} jitter attempts")]
    NotPositiveDefinite { n: usize, attempts: usize },

    /// A triangular factor carried a non-positive diagonal entry.
    #[error("non-positive diagonal entry {value} at index {index}")]
    NonPositiveDiagonal { index: usize, value: f64 },

    /// Operands with incompatible dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Action outside the environment's action space.
    #[error("invalid action: {0}")]
    InvalidAction(String),

    /// Unknown built-in maze layout name.
    #[error("unknown layout '{0}'")]
    UnknownLayout(String),

    /// A maze grid that cannot be used (bad glyphs, missing start/goal, ...).
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    /// Model queried before any `fit` call.
    #[error("model has not been fitted")]
    NotFitted,

    /// An operation that only applies to one family of models.
    #[error("model kind mismatch: {0}")]
    ModelKindMismatch(String),

    /// Planner mode incompatible with the configured model/agent.
    #[error("incompatible mode: {0}")]
    IncompatibleMode(String),

    /// Config failed validation; `field` is the offending key path.
    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    /// Non-finite values where finite ones are required (NaN gradients, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed or mismatched checkpoint payload.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
