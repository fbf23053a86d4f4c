//! Random networked systems with finitely supported blocks and their exact
//! moments.

mod distribution;
mod io;
mod network;

use thiserror::Error;

use crate::linalg::LinalgError;

pub use distribution::{FiniteMatrixDistribution, MomentData, Side};
pub use network::{Mode, Neighborhoods, NetworkModel, PositivityViolation, RowVariance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("distribution has empty support")]
    EmptySupport,
    #[error("support weight {index} is {weight}, expected a value in (0, 1]")]
    BadWeight { index: usize, weight: f64 },
    #[error("support weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("joint support size {size} exceeds cap {cap}")]
    SupportOverflow { size: u128, cap: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}
