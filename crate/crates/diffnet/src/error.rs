use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: dimension {dim} expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        dim: usize,
        expected: usize,
        got: usize,
    },
    #[error("rank mismatch in {op}: expected rank {expected}, got {got}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("array of shape {shape:?} needs {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("invalid layer configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;
