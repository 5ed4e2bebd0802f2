use std::path::PathBuf;

use lamp_core::LampError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("sample {index} out of range ({len} samples)")]
    SampleOutOfRange { index: usize, len: usize },

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] LampError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Checkpoint(_) => 3,
            Error::SampleOutOfRange { .. } => 4,
            Error::Io { .. } | Error::Parse { .. } | Error::Data(_) | Error::Core(_) => 5,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
