use thiserror::Error;

#[derive(Debug, Error)]
pub enum DigitError {
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX {what}: need {expected} bytes, found {found}")]
    Truncated { what: &'static str, expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label {label} at index {index} is outside 0..=9")]
    BadLabel { index: usize, label: u8 },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged { step: usize, what: String },
    #[error(transparent)]
    Diff(#[from] diffnet::DiffError),
    #[error(transparent)]
    Itsa(#[from] itsa_core::ItsaError),
    #[error(transparent)]
    Fisher(#[from] fisher_lab::FisherError),
}

pub type Result<T> = std::result::Result<T, DigitError>;
