use std::io;

use thiserror::Error;

/// Errors raised across the library. Each variant maps to one failure class
/// so callers (the CLI in particular) can pick an exit code.
#[derive(Debug, Error)]
pub enum BfnError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported schema: {0}")]
    UnsupportedSchema(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("quality error: {0}")]
    Quality(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BfnError>;

pub(crate) fn shape_err(msg: impl Into<String>) -> BfnError {
    BfnError::Shape(msg.into())
}

pub(crate) fn check_unit_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(BfnError::Domain(format!("time {t} outside [0, 1]")))
    }
}
