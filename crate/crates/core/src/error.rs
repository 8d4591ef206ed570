use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation, inference and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("solver failed to converge: {0}")]
    Convergence(String),

    #[error("density estimate below floor: {0}")]
    Density(String),

    #[error("bound prediction {0:e} is numerically zero; use the zero-limit path")]
    ZeroTau(f64),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),

    #[error("interval endpoints out of order: {0}")]
    Order(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
}

pub type Result<T> = std::result::Result<T, Error>;
