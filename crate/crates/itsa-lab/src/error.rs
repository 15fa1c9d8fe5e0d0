use std::path::Path;

use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("metrics file {path}: {reason}")]
    Csv { path: String, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("no metrics.csv files under {0}")]
    NoMetrics(String),
    #[error("image output: {0}")]
    Image(String),
    #[error("{context}: {source}")]
    Run { context: String, source: Box<dyn std::error::Error + Send + Sync> },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }

    pub fn run(context: impl Into<String>, source: impl std::error::Error + Send + Sync + 'static) -> Self {
        HarnessError::Run { context: context.into(), source: Box::new(source) }
    }

    /// Process exit status: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
