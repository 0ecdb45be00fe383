//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's dimension contract.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A caller broke an API contract (bad label, non-scalar backward root,
    /// missing gradient, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced a non-finite value or an unrepairable matrix.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Input is structurally valid but too small/empty for the operation.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// An inconsistent model or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A text file failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A record refers to an unknown utterance or speaker id.
    #[error("unknown reference: {0}")]
    Reference(String),

    /// Binary file carries the wrong magic bytes.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    /// Binary file version is not supported by this build.
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    /// Binary file ended before its declared contents.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// Stored checksum does not match the file contents.
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
