use std::path::PathBuf;

use spatialgeo_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{count} invalid records: {ids}")]
    Invalid { count: usize, ids: String },
}

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 1,
    Data = 2,
    Internal = 3,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Error::Usage(_) => ExitCode::Usage,
            Error::Io { .. } | Error::Format { .. } | Error::Invalid { .. } => ExitCode::Data,
            Error::Core(e) => match e {
                CoreError::Config(_) | CoreError::State(_) | CoreError::Input(_) => ExitCode::Usage,
                CoreError::Data(_) | CoreError::Checkpoint(_) => ExitCode::Data,
                CoreError::Dimension(_) | CoreError::Index(_) | CoreError::Contract(_) | CoreError::NonFinite(_) => {
                    ExitCode::Internal
                }
            },
        }
    }
}
