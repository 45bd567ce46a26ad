use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the MDCA library.
#[derive(Debug, Error)]
pub enum MdcaError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("non-finite sample in tensor data at index {0}")]
    NonFinite(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("checkpoint has bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MdcaError>;
