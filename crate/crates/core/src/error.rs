use thiserror::Error;

/// Errors raised by the inference pipeline, the generators and the file readers.
#[derive(Debug, Error)]
pub enum ClpError {
    /// A user-supplied parameter or config field is invalid.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Input data violates a structural requirement (shape, symmetry, finiteness).
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("row {row} has only {observed} observed entries")]
    RowDegenerate { row: usize, observed: usize },

    #[error("calibration set of size {available} cannot serve {requested} (minimum {minimum} each)")]
    InsufficientCalibration {
        available: usize,
        requested: usize,
        minimum: usize,
    },

    #[error("operation not supported: {0}")]
    Unsupported(String),

    /// A rejected coordinate was not part of the declared test set.
    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("parse error at line {line}, column {column}: {reason}")]
    Parse {
        line: u64,
        column: usize,
        reason: String,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ClpError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ClpError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            ClpError::Config { .. }
                | ClpError::Validation(_)
                | ClpError::Parse { .. }
                | ClpError::Unsupported(_)
                | ClpError::Json(_)
                | ClpError::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, ClpError>;

pub fn check_probability(field: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ClpError::config(field, format!("{p} is not a probability in [0, 1]")))
    }
}
