use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupted cache: {0}")]
    CorruptCache(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic { path: PathBuf, expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported format version in {path}: file has {found}, this build reads {supported}")]
    Version { path: PathBuf, found: u32, supported: u32 },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::CorruptCache(_) => "corrupt_cache",
            Error::NonFinite { .. } => "non_finite",
            Error::BadMagic { .. } => "bad_magic",
            Error::Version { .. } => "version",
            Error::Format { .. } => "format",
            Error::Manifest(_) => "manifest",
            Error::Diverged(_) => "diverged",
            Error::Io { .. } => "io",
        }
    }
}
