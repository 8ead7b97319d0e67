//! Error type shared across the crate.

use std::path::PathBuf;

/// Everything that can go wrong, from shape mismatches to corrupt files.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible tensor/matrix shapes for an operation.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: String, details: String },

    /// A numeric parameter is outside its legal range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Structural requirement violated (frame counts, span schedules, ...).
    #[error("invalid structure: {0}")]
    Structure(String),

    /// Bad run configuration (file contents or flag combination).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A computation produced NaN/inf or hit an undefined case.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The brute-force oracle was asked for a problem size it refuses.
    #[error("oracle scope exceeded: {0}")]
    OracleScope(String),

    /// Token id outside the vocabulary, or vocabulary too small.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// File does not start with the expected magic bytes.
    #[error("bad magic in {path}: not a recognized file")]
    BadMagic { path: PathBuf },

    /// File has a format version this build does not understand.
    #[error("version mismatch in {path}: found {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },

    /// File ended before the declared payload was complete.
    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },

    /// File has extra bytes after the declared payload.
    #[error("trailing bytes after payload in {path}")]
    TrailingBytes { path: PathBuf },

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Unparseable JSON/TOML content.
    #[error("malformed content: {0}")]
    Malformed(String),
}

impl Error {
    /// Shorthand for shape errors.
    pub fn shape(op: impl Into<String>, details: impl Into<String>) -> Self {
        Error::Shape { op: op.into(), details: details.into() }
    }

    /// Process exit code for the CLI. Usage errors exit 2 via clap before
    /// this is consulted.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::Truncated { .. }
            | Error::TrailingBytes { .. }
            | Error::Io(_)
            | Error::Malformed(_) => 4,
            Error::Shape { .. } | Error::Structure(_) | Error::Vocab(_) | Error::Parameter(_) => 5,
            Error::Numerical(_) => 6,
            Error::OracleScope(_) => 7,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
