use std::path::{Path, PathBuf};

use sdnp_core::Error as CoreError;

/// Exit status 2 for bad input, 1 for everything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("{}: {reason}", path.display())]
    File { path: PathBuf, reason: String },

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::File { .. } => 2,
            CliError::Internal(_) => 1,
        }
    }

    pub fn file(path: &Path, reason: impl std::fmt::Display) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(e) => CliError::Internal(e.to_string()),
            e @ CoreError::Format { .. } => CliError::Input(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a file name to a core error raised while reading it.
pub fn at(path: &Path) -> impl FnOnce(CoreError) -> CliError + '_ {
    move |e| CliError::file(path, e)
}
