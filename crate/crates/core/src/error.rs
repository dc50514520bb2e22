use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    Mismatch(String),

    #[error("parse error at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("enumeration too large: {terms} terms exceeds limit {limit}")]
    EnumerationTooLarge { terms: f64, limit: f64 },

    #[error("http failure for {url}: {reason}")]
    Http { url: String, reason: String },

    #[error("count mismatch in {file}: expected {expected} items, found {found}")]
    CountMismatch {
        file: String,
        expected: usize,
        found: usize,
    },

    #[error("gzip corruption in {file}: {reason}")]
    Gzip { file: String, reason: String },

    #[error("cache miss in offline mode: {}", .0.display())]
    Offline(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
