use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("layer stack truncated: j_max = {j_max} < 3 w = {min}")]
    Truncation { j_max: usize, min: f64 },

    #[error("integration failed at t = {t:e}: step size {step:e} underflowed ({steps} steps taken)")]
    StepUnderflow { t: f64, step: f64, steps: usize },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("normal matrix is rank deficient (condition number {condition_number:e})")]
    RankDeficient { condition_number: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("window out of bounds: {0}")]
    Bounds(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {value}")))
    }
}

pub(crate) fn ensure_non_negative(name: &str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be non-negative and finite, got {value}")))
    }
}
