//! Closed-loop LTI simulation with a Luenberger observer, optional additive
//! watermark on the input, and a sensor-attack hook.

mod covariance;
mod sim;
mod spec;

pub use covariance::{
    derive_covariances, residual_autocorrelation, theoretical_lag1, watermark_lag, DerivedCovariances,
    MIN_AUTOCORRELATION_LEN,
};
pub use sim::{simulate, AttackHook, NoAttack, ResidualTrace, SimOutput, SimState, Simulator, StepRecord};
pub use spec::{validate_spec, SystemSpec, ValidationReport};

#[cfg(test)]
pub(crate) use spec::fixtures;

use crate::numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtiError {
    #[error("invalid system: {0}")]
    InvalidSpec(ValidationReport),
    #[error("C(A+BK)^k B vanishes for every k below {cap}")]
    KPrimeUndefined { cap: usize },
    #[error("trace of length {len} is too short (need {min})")]
    TraceTooShort { len: usize, min: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
