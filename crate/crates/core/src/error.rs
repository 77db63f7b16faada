use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors produced by the diagnostic toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file. `row` is the 0-based data row (header excluded).
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    /// Well-formed input that violates a dataset invariant.
    #[error("validation error at row {row}: {msg}")]
    Validation { row: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("invalid parameter `{name}`: {msg}")]
    InvalidParameter { name: &'static str, msg: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    /// Input for which the requested quantity is undefined (constant
    /// sequences, coincident points, single-class labels, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A diagnostic term failed the non-negativity precondition.
    #[error("assembly error: term `{term}` = {value} is negative or non-finite")]
    Assembly { term: &'static str, value: f64 },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// I/O failure on a named file.
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            msg: msg.into(),
        }
    }

    /// True for errors caused by the caller's configuration rather than the
    /// data or the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidParameter { .. } | Error::Calibration(_))
    }
}

/// Checks that a confidence parameter lies in the open interval (0, 1).
pub(crate) fn check_open_unit(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            name,
            format!("must lie in (0, 1), got {value}"),
        ))
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}
