use rayon::prelude::*;
use serde::Serialize;

use super::ellipsoid::{
    bounding_ball_radius, build_abar, dilate, outer_ellipsoid, volume, EllipsoidObjective, OuterEllipsoid,
    OuterOptions, VolumeOptions,
};
use super::inner::mc_inner_estimate;
use super::theta::{build_theta, ThetaMode};
use super::ReachError;
use crate::calibration::{threshold_for_fa, FaTable};
use crate::detectors::DetectorFamily;
use crate::lti_sim::{DerivedCovariances, SystemSpec};
use crate::numerics::{operator_norm, Matrix, VolumeEstimate};

pub const DEFAULT_HORIZON: usize = 12;
pub const HORIZON_NORM_LIMIT: f64 = 0.99;
const MAX_HORIZON: usize = 10_000;

#[derive(Debug, Clone)]
pub struct CapabilityOptions {
    pub horizon: usize,
    pub objective: EllipsoidObjective,
    pub theta_mode: ThetaMode,
    pub volume_samples: u64,
    pub soundness_samples: usize,
    /// Steps of the inner estimate; `None` skips it.
    pub inner_steps: Option<usize>,
    pub seed: u64,
}

impl Default for CapabilityOptions {
    fn default() -> Self {
        CapabilityOptions {
            horizon: DEFAULT_HORIZON,
            objective: EllipsoidObjective::MinVolume,
            theta_mode: ThetaMode::SteadyState,
            volume_samples: 1_000_000,
            soundness_samples: 10_000,
            inner_steps: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReachResult {
    pub n: usize,
    pub tau: f64,
    pub ellipsoid: OuterEllipsoid,
    pub epsilon: f64,
    pub volume: VolumeEstimate,
    pub inner: Option<VolumeEstimate>,
    pub gap: Option<f64>,
}

impl ReachResult {
    /// `volume ≥ inner − 3` combined standard errors.
    pub fn is_sound(&self) -> bool {
        match self.inner {
            None => true,
            Some(i) => {
                let se = (self.volume.standard_error.powi(2) + i.standard_error.powi(2)).sqrt();
                self.volume.value >= i.value - 3.0 * se
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub fa_rate: f64,
    pub tau: Option<f64>,
    pub result: Option<ReachResult>,
    /// Why the point has no result.
    pub omitted: Option<String>,
}

/// Smallest `n ≥ start` with `‖Aⁿ‖ < 0.99`.
pub fn effective_horizon(a: &Matrix, start: usize) -> Result<usize, ReachError> {
    let mut n = start.max(1);
    let mut pow = a.pow(n as u32);
    while operator_norm(&pow) >= HORIZON_NORM_LIMIT {
        n += 1;
        if n > MAX_HORIZON {
            return Err(ReachError::HorizonTooShort(format!("‖Aⁿ‖ stays above {HORIZON_NORM_LIMIT} up to n = {MAX_HORIZON}")));
        }
        pow = a * pow;
    }
    Ok(n)
}

/// Outer approximation of the reachable set at threshold `τ`: residual
/// histories of length `n` are mapped through `Ā_{n−1}`, then the result is
/// dilated to cover every later step.
pub fn reach_at(
    spec: &SystemSpec,
    derived: &DerivedCovariances,
    family: &DetectorFamily,
    tau: f64,
    opts: &CapabilityOptions,
) -> Result<ReachResult, ReachError> {
    let n = effective_horizon(&spec.a, opts.horizon)?;
    let abar = build_abar(spec, derived, n - 1);
    let theta = build_theta(family, n - 1, tau, spec.q(), spec.m(), derived.k_prime, opts.theta_mode)?;
    let eta = bounding_ball_radius(&theta, &abar);
    let outer_opts = OuterOptions {
        objective: opts.objective,
        soundness_samples: opts.soundness_samples,
        seed: opts.seed,
        ..Default::default()
    };
    let ellipsoid = outer_ellipsoid(&abar, &theta, eta, &outer_opts)?;
    let epsilon = dilate(&ellipsoid.h, &spec.a, n)?;
    let vol = volume(&ellipsoid.h, epsilon, &VolumeOptions { samples: opts.volume_samples, seed: opts.seed })?;
    let inner = match opts.inner_steps {
        Some(steps) => Some(mc_inner_estimate(spec, derived, family, tau, steps, opts.seed)?),
        None => None,
    };
    let gap = inner.map(|i| vol.value - i.value);
    Ok(ReachResult { n, tau, ellipsoid, epsilon, volume: vol, inner, gap })
}

/// Reachable-set volume against false-alarm rate. Points whose rate the
/// table cannot reach, or whose analysis fails, are kept with a reason.
pub fn attack_capability_curve(
    spec: &SystemSpec,
    derived: &DerivedCovariances,
    family: &DetectorFamily,
    fa_grid: &[f64],
    table: &FaTable,
    opts: &CapabilityOptions,
) -> Vec<CurvePoint> {
    fa_grid
        .par_iter()
        .map(|&fa| match threshold_for_fa(table, fa) {
            Err(e) => CurvePoint { fa_rate: fa, tau: None, result: None, omitted: Some(e.to_string()) },
            Ok(tau) => match reach_at(spec, derived, family, tau, opts) {
                Ok(r) => CurvePoint { fa_rate: fa, tau: Some(tau), result: Some(r), omitted: None },
                Err(e) => CurvePoint { fa_rate: fa, tau: Some(tau), result: None, omitted: Some(e.to_string()) },
            },
        })
        .collect()
}
