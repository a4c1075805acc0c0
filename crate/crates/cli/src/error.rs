use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed JSON or a field outside its schema.
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    /// A well-formed request that the command will not execute.
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Core(#[from] overlap_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Refused(_) => 2,
            _ => 1,
        }
    }
}
