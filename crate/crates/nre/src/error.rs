use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Violations of the on-disk formats.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("wrong magic: expected {expected}, found {found}")]
    WrongMagic { expected: String, found: String },
    #[error("truncated payload: {what} needs {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("unsupported version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("fingerprint mismatch: metadata says {expected:016x}, parameters hash to {found:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("malformed file: {0}")]
    Malformed(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] nre_core::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for unreadable or
    /// inconsistent data, 4 for numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Core(nre_core::Error::InvalidParameter(_)) => 2,
            Error::Core(nre_core::Error::Divergence(_) | nre_core::Error::NonFinite(_)) => 4,
            _ => 3,
        }
    }
}
