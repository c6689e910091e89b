//! Small dense numerical kernel shared by the simulation, detector and
//! reachability code: symmetric eigen-solvers, matrix functions, special
//! functions, root finding, a barrier-method SDP solver and a few geometric
//! volume routines.
//!
//! Dimensions are tiny everywhere in this crate (states and residuals of a
//! handful of components, LMIs of a few dozen rows), so everything is dense and
//! favours accuracy over asymptotic speed.

mod geometry;
mod linalg;
mod rng;
pub mod serde_rows;
mod roots;
mod sdp;
mod special;

pub use geometry::{
    convex_hull_area_2d, ellipse_perimeter, ellipsoid_distance, mc_volume, AxisBox, HullArea,
    VolumeEstimate,
};
pub use linalg::{
    is_psd, log_det_pd, min_singular_value, operator_norm, singular_values, solve_discrete_lyapunov,
    spectral_radius, sym_inv_sqrt, sym_sqrt, symmetric_eigen, Matrix, SymEigen, SymMatrix, Vector,
};
pub use rng::{SignalRng, StreamId};
pub use roots::bisect_root;
pub use sdp::{
    solve_small_sdp, AffineMatrix, LinearInequality, SdpOptions, SdpProblem, SdpSolution, SdpStatus,
    MAX_LMI_DIM, MAX_SDP_VARIABLES,
};
pub use special::{ln_gamma, log_multivariate_gamma, standard_normal_quantile};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Schur stable (spectral radius {0:.6})")]
    NotSchurStable(f64),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("matrix is nearly singular (smallest eigenvalue {0:.3e})")]
    NearSingular(f64),
    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("gamma function argument {0} is not positive")]
    PoleOrNonpositive(f64),
    #[error("no sign change on [{lo}, {hi}]: f(lo) = {flo}, f(hi) = {fhi}")]
    NoSignChange { lo: f64, hi: f64, flo: f64, fhi: f64 },
    #[error("semidefinite program is infeasible: {0}")]
    Infeasible(String),
    #[error("semidefinite program exceeds the supported size: {0}")]
    ProblemTooLarge(String),
    #[error("semidefinite program is unbounded below")]
    Unbounded,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
