use thiserror::Error;

#[derive(Debug, Error)]
pub enum StereoError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("the scp shift needs a model to compute the perturbation")]
    MissingModel,
    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged { step: usize, what: String },
    #[error("malformed PFM: {0}")]
    Pfm(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Diff(#[from] diffnet::DiffError),
    #[error(transparent)]
    Itsa(#[from] itsa_core::ItsaError),
}

pub type Result<T> = std::result::Result<T, StereoError>;
