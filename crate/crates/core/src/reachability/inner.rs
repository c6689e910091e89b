use super::ReachError;
use crate::detectors::{Detector, DetectorFamily};
use crate::lti_sim::{DerivedCovariances, SystemSpec};
use crate::numerics::{convex_hull_area_2d, sym_sqrt, SignalRng, StreamId, Vector, VolumeEstimate};

pub const MIN_INNER_STEPS: usize = 10_000;
pub const PROPOSAL_VARIANCE: f64 = 5.0;
pub const SHRINK_FACTOR: f64 = 0.9;
pub const MAX_SHRINKS: usize = 200;

/// Inner estimate of the attack-reachable set: drive `δ^{(a)}` with
/// proposals `r̄ ~ N(0, 5I)`, shrunk by 0.9 until the detector stays quiet
/// (at most 200 times, otherwise the step is skipped), and return the convex
/// hull area of the visited points.
///
/// The watermark detector is first run on honest residuals through its
/// warm-up so that its window holds real data; those steps are not recorded.
/// The hull area carries no standard error.
pub fn mc_inner_estimate(
    spec: &SystemSpec,
    derived: &DerivedCovariances,
    family: &DetectorFamily,
    tau: f64,
    n_steps: usize,
    seed: u64,
) -> Result<VolumeEstimate, ReachError> {
    if spec.p() != 2 {
        return Err(ReachError::DimensionUnsupported(spec.p()));
    }
    if n_steps < MIN_INNER_STEPS {
        return Err(ReachError::InvalidParameters(format!("inner estimate needs at least {MIN_INNER_STEPS} steps")));
    }
    let (q, m) = (spec.q(), spec.m());
    let mut det = Detector::new(family, tau, spec, derived)?;
    let mut rng = SignalRng::new(seed, StreamId::MonteCarlo);
    let mut wm = SignalRng::new(seed, StreamId::Watermark);
    let e_factor = if family.needs_watermark() {
        sym_sqrt(&crate::numerics::SymMatrix::new(spec.sigma_e.clone())?)?.into_matrix()
    } else {
        crate::numerics::Matrix::zeros(m, m)
    };
    let l_sig = &spec.l * derived.sigma_r_sqrt.as_matrix();
    let mut delta = Vector::zeros(spec.p());
    let scale = PROPOSAL_VARIANCE.sqrt();

    for _ in 0..det.warmup() {
        let r = rng.standard_normal_vector(q);
        let e = wm.gaussian(&e_factor);
        det.step(r.as_slice(), e.as_slice());
        delta = &spec.a * &delta + &l_sig * &r;
    }

    let mut points = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let mut r = rng.standard_normal_vector(q) * scale;
        let e = wm.gaussian(&e_factor);
        let mut accepted = false;
        for _ in 0..=MAX_SHRINKS {
            if !det.peek(r.as_slice(), e.as_slice()).alarm {
                det.step(r.as_slice(), e.as_slice());
                accepted = true;
                break;
            }
            r *= SHRINK_FACTOR;
        }
        if accepted {
            delta = &spec.a * &delta + &l_sig * &r;
            points.push([delta[0], delta[1]]);
        }
    }
    let hull = convex_hull_area_2d(&points);
    Ok(VolumeEstimate { value: hull.area, standard_error: 0.0, sample_count: n_steps as u64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti_sim::{derive_covariances, fixtures::murguia2d};

    #[test]
    fn tiny_threshold_collapses_the_hull() {
        let spec = murguia2d();
        let d = derive_covariances(&spec).unwrap();
        let a = mc_inner_estimate(&spec, &d, &DetectorFamily::Chi2, 1e-10, 10_000, 1).unwrap();
        assert!(a.value < 1e-10, "{a:?}");
    }

    #[test]
    fn larger_threshold_grows_the_hull() {
        let spec = murguia2d();
        let d = derive_covariances(&spec).unwrap();
        let small = mc_inner_estimate(&spec, &d, &DetectorFamily::Chi2, 2.0, 20_000, 1).unwrap();
        let big = mc_inner_estimate(&spec, &d, &DetectorFamily::Chi2, 8.0, 20_000, 1).unwrap();
        assert!(small.value > 0.0 && big.value > small.value);
    }

    #[test]
    fn rejects_short_runs_and_other_dimensions() {
        let spec = murguia2d();
        let d = derive_covariances(&spec).unwrap();
        assert!(mc_inner_estimate(&spec, &d, &DetectorFamily::Chi2, 2.0, 100, 1).is_err());
    }
}
