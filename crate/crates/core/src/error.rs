use thiserror::Error;

use crate::cross_entropy::CeTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("all weights are zero")]
    AllWeightsZero,

    #[error("non-finite importance weight {value} at sample {index}")]
    NonFiniteWeight { index: usize, value: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("cross-entropy run did not reach the threshold within {} iterations", .0.iterations)]
    MaxIterationsExceeded(Box<CeTrace>),

    #[error(
        "Kepler solver did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
