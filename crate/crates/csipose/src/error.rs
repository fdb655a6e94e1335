use std::path::PathBuf;

/// Failures of the file formats and the command driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a {expected} file (bad magic bytes)")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("{path}: format version {found} is not supported (expected {supported})")]
    UnsupportedVersion { path: PathBuf, found: u32, supported: u32 },
    #[error("{path}: truncated at byte offset {offset}: needed {needed} more bytes, found {available}")]
    Truncated {
        path: PathBuf,
        offset: u64,
        needed: usize,
        available: usize,
    },
    #[error("{path}: frame {frame} timestamp {timestamp} does not follow {previous}")]
    NonMonotonic {
        path: PathBuf,
        frame: usize,
        previous: f64,
        timestamp: f64,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] csipose_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit status for each class of failure.
pub mod exit {
    pub const IO: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const FORMAT: i32 = 3;
    pub const NUMERICAL: i32 = 4;
    pub const INVALID_INPUT: i32 = 5;
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Invalid { path: path.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        use csipose_core::Error as C;
        match self {
            Error::Io { .. } => exit::IO,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Truncated { .. }
            | Error::NonMonotonic { .. }
            | Error::Parse { .. }
            | Error::Invalid { .. } => exit::FORMAT,
            Error::Core(e) => match e {
                C::NonFinite(_) | C::DegeneratePose { .. } => exit::NUMERICAL,
                C::ParamMismatch { .. } | C::DuplicateParam(_) => exit::FORMAT,
                _ => exit::INVALID_INPUT,
            },
        }
    }
}
