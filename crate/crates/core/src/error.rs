use thiserror::Error;

use crate::sampling::TrajectoryRecord;

pub type Result<T, E = FmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("time {0} is outside [0, 1]")]
    InvalidTime(f64),

    #[error("noise level {0} must be finite and non-negative")]
    InvalidNoiseLevel(f64),

    /// Evaluation at a time where the velocity/denoiser duality divides by zero.
    #[error("singular time {t}: {what}")]
    SingularTime { t: f64, what: &'static str },

    #[error("point is outside the support of every cone at t = {t}")]
    OutsideSupport { t: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at batch sample {index}")]
    NonFiniteLoss { index: usize },

    #[error("training diverged at step {step}")]
    Diverged {
        step: usize,
        /// Weights of the last step whose loss was finite.
        last_valid: Box<crate::net::NetModel>,
    },

    #[error("trajectory became non-finite at step {step}")]
    NonFiniteTrajectory {
        step: usize,
        partial: Box<TrajectoryRecord>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(FmError::DimensionMismatch { expected, got });
    }
    Ok(())
}
