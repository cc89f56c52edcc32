use std::path::Path;

use thiserror::Error;

use crate::checkpoint::CheckpointError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Core(#[from] ether_core::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Checkpoint(_) => EXIT_IO,
            CliError::Core(ether_core::Error::Config(_)) | CliError::Core(ether_core::Error::Dimension { .. }) => {
                EXIT_CONFIG
            }
            CliError::Core(_) | CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
