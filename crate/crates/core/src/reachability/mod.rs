//! Attack-capability analysis: the residual histories a detector tolerates,
//! an ellipsoid containing the attacker-induced estimation error they
//! produce, and its volume as a function of the false-alarm rate.

mod curve;
mod ellipsoid;
mod inner;
mod theta;

pub use curve::{
    attack_capability_curve, effective_horizon, reach_at, CapabilityOptions, CurvePoint, ReachResult,
    DEFAULT_HORIZON, HORIZON_NORM_LIMIT,
};
pub use ellipsoid::{
    bounding_ball_radius, build_abar, dilate, outer_ellipsoid, residual_bound, soundness_level, volume,
    EllipsoidObjective, OuterEllipsoid, OuterOptions, SolverDiagnostics, VolumeOptions,
};
pub use inner::{mc_inner_estimate, MAX_SHRINKS, MIN_INNER_STEPS, PROPOSAL_VARIANCE, SHRINK_FACTOR};
pub use theta::{build_theta, epsilon_rhs, solve_epsilon_dw, ConstraintSet, QuadForm, QuadShape, ThetaMode};

use thiserror::Error;

use crate::detectors::DetectorError;
use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReachError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("horizon too short: {0}")]
    HorizonTooShort(String),
    #[error("threshold {tau} is below the attainable minimum {minimum}")]
    ThresholdBelowMinimum { tau: f64, minimum: f64 },
    #[error("ellipsoid program is infeasible: {0}")]
    SolverInfeasible(String),
    #[error("ellipsoid matrix is not positive definite: {0}")]
    NotPd(String),
    #[error("degenerate certificate: c = {c} is not above 1")]
    Degenerate { c: f64 },
    #[error("sampled point escapes the ellipsoid (level {level})")]
    SoundnessViolation { level: f64 },
    #[error("dimension {0} is not supported")]
    DimensionUnsupported(usize),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
