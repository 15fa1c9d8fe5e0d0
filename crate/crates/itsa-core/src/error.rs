use diffnet::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ItsaError {
    #[error("invalid ITSA configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite input gradient for sample {sample}")]
    NonFiniteGradient { sample: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T> = std::result::Result<T, ItsaError>;
