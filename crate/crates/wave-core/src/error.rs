//! Error types shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand dimensions do not line up (message names the operands).
    #[error("shape error: {0}")]
    Shape(String),

    /// A value argument is out of range (labels, counts, hyperparameters).
    #[error("input error: {0}")]
    Input(String),

    /// Backward called without, or with a stale, forward cache.
    #[error("state error: {0}")]
    State(String),

    /// A target configuration cannot be built from a template bank.
    #[error("incompatible shapes: {0}")]
    Incompatible(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    /// Container file is malformed.
    #[error("format error: {0}")]
    Format(#[from] FormatError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failure modes when reading a WAVELGN1 container.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: not a WAVELGN container")]
    Magic,
    #[error("unsupported container version {found}")]
    Version { found: u32 },
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error("payload checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("bad metadata: {0}")]
    Metadata(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
