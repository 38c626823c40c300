use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state coordinate {coord} = {value} lies outside the model domain")]
    Domain { coord: usize, value: f64 },

    #[error("non-finite value in coordinate {coord}")]
    NonFinite { coord: usize },

    #[error("diffusion coefficient {coord} = {value} is not strictly positive")]
    ModelViolation { coord: usize, value: f64 },

    #[error("scheme covariance is not positive definite at state {state:?}")]
    Degenerate { state: [f64; crate::linalg::MAX_DIM] },

    #[error("operation not applicable: {0}")]
    NotApplicable(&'static str),

    #[error("particle filter collapsed at time index {time}")]
    FilterCollapse { time: usize },

    #[error("M-step normal equations are singular (determinant {det:e})")]
    MstepSingular { det: f64 },

    #[error("simulation exploded at step {step}: coordinate {coord} = {value:e}")]
    Explosion { step: usize, coord: usize, value: f64 },

    #[error("insufficient data: need at least {needed} transitions, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("optimizer failure: {0}")]
    Optimizer(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(x: &[f64]) -> Self {
        let mut state = [f64::NAN; crate::linalg::MAX_DIM];
        state[..x.len()].copy_from_slice(x);
        Error::Degenerate { state }
    }
}
