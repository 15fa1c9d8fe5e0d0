use diffnet::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FisherError {
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{what} has dimension {got}, explicit Jacobians support at most {max}")]
    TooLarge { what: &'static str, got: usize, max: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T> = std::result::Result<T, FisherError>;

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(FisherError::InvalidSigma(sigma))
    }
}
