use std::io;

use coverduals::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(CoreError),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(e) => CliError::Io(e),
            CoreError::Config(msg) => CliError::Spec(msg),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 2 for spec problems, 3 for I/O failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Spec(_) => 2,
            CliError::Io(_) => 3,
            CliError::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 3,
            CliError::Csv(_) => 1,
            CliError::Core(CoreError::Format(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
