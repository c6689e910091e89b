use serde::Serialize;

use super::ReachError;
use crate::detectors::{wishart_constant, DetectorFamily};
use crate::numerics::{bisect_root, Matrix};

/// One quadratic form `RᵀQR` on the stacked residual vector
/// `R_n = [r̄_n; …; r̄_0]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum QuadShape {
    /// `coeff · ‖R[offset..offset+len]‖²`.
    Block { offset: usize, len: usize, coeff: f64 },
    /// `coeff · ‖Vᵀ R‖²` with `V` of size `dim × q`.
    Rank {
        #[serde(skip)]
        v: Matrix,
        coeff: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadForm {
    /// Time index of the detector step this form encodes.
    pub i: usize,
    /// CUSUM only: window length minus one.
    pub j: Option<usize>,
    pub shape: QuadShape,
}

impl QuadForm {
    pub fn value(&self, r: &[f64]) -> f64 {
        match &self.shape {
            QuadShape::Block { offset, len, coeff } => {
                coeff * r[*offset..offset + len].iter().map(|x| x * x).sum::<f64>()
            }
            QuadShape::Rank { v, coeff } => {
                let mut acc = 0.0;
                for c in 0..v.ncols() {
                    let s: f64 = v.column(c).iter().zip(r).map(|(a, b)| a * b).sum();
                    acc += s * s;
                }
                coeff * acc
            }
        }
    }

    pub fn to_matrix(&self, dim: usize) -> Matrix {
        match &self.shape {
            QuadShape::Block { offset, len, coeff } => {
                let mut m = Matrix::zeros(dim, dim);
                for k in *offset..offset + len {
                    m[(k, k)] = *coeff;
                }
                m
            }
            QuadShape::Rank { v, coeff } => v * v.transpose() * *coeff,
        }
    }
}

/// Which residual windows constrain a watermark detector's `Θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ThetaMode {
    /// Exactly the detector steps `ℓ+k′ … n` of a run started at time 0; the
    /// oldest residuals stay unconstrained.
    Literal,
    /// Steady state: every window of `ℓ` consecutive residuals is bounded,
    /// including those reaching back before `r̄_0`, so each window is
    /// clipped to the horizon. Identical to `Literal` for the other families.
    SteadyState,
}

/// The set `Θ_n` of residual histories that raise no alarm, as a list of
/// quadratic forms `RᵀQR < 1`.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintSet {
    pub n: usize,
    pub q: usize,
    pub m: usize,
    pub dim: usize,
    pub family: DetectorFamily,
    pub tau: f64,
    pub forms: Vec<QuadForm>,
    /// Watermark detector: the per-window bound `Σ r̄ᵀr̄ < (q+m)ε`.
    pub epsilon_dw: Option<f64>,
}

impl ConstraintSet {
    pub fn contains(&self, r: &[f64]) -> bool {
        self.forms.iter().all(|f| f.value(r) < 1.0)
    }

    /// `max_i RᵀQ_iR`; `R` lies in the set iff this is below 1.
    pub fn max_value(&self, r: &[f64]) -> f64 {
        self.forms.iter().map(|f| f.value(r)).fold(0.0, f64::max)
    }

    pub fn matrices(&self) -> Vec<Matrix> {
        self.forms.iter().map(|f| f.to_matrix(self.dim)).collect()
    }
}

/// Right-hand side of the watermark threshold equation,
/// `dε/2 + (d+1−ℓ)/2 · log(ε^d) + log(2^{dℓ/2}Γ_d(ℓ/2))` with `d = q+m`.
pub fn epsilon_rhs(eps: f64, ell: usize, d: usize, constant: f64) -> f64 {
    let df = d as f64;
    df * eps / 2.0 + (df + 1.0 - ell as f64) / 2.0 * df * eps.ln() + constant
}

/// Solves the threshold equation for `ε > ℓ−1−q−m`.
pub fn solve_epsilon_dw(tau_d: f64, ell: usize, q: usize, m: usize) -> Result<f64, ReachError> {
    let d = q + m;
    if ell <= d + 1 {
        return Err(ReachError::InvalidParameters(format!("window {ell} must exceed q+m+1 = {}", d + 1)));
    }
    let constant = wishart_constant(d, ell)?;
    let lo = (ell - 1 - d) as f64;
    let fmin = epsilon_rhs(lo, ell, d, constant);
    if !(tau_d > fmin) {
        return Err(ReachError::ThresholdBelowMinimum { tau: tau_d, minimum: fmin });
    }
    let f = |e: f64| epsilon_rhs(e, ell, d, constant) - tau_d;
    let mut hi = 2.0 * lo.max(1.0);
    while f(hi) <= 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(ReachError::ThresholdBelowMinimum { tau: tau_d, minimum: fmin });
        }
    }
    let tol = 1e-14 * hi;
    Ok(bisect_root(f, lo, hi, tol)?)
}

fn block(i: usize, j: Option<usize>, offset: usize, len: usize, coeff: f64) -> QuadForm {
    QuadForm { i, j, shape: QuadShape::Block { offset, len, coeff } }
}

/// Builds `Θ_n` for one detector at threshold `τ`. Residual `r̄_i` occupies
/// rows `q(n−i) .. q(n−i)+q` of `R_n`.
///
/// `k_prime` and `m` are only read for the watermark detector.
pub fn build_theta(
    family: &DetectorFamily,
    n: usize,
    tau: f64,
    q: usize,
    m: usize,
    k_prime: usize,
    mode: ThetaMode,
) -> Result<ConstraintSet, ReachError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(ReachError::InvalidParameters(format!("threshold must be positive and finite, got {tau}")));
    }
    family.validate(q, m)?;
    let dim = q * (n + 1);
    let off = |i: usize| q * (n - i);
    let mut forms = Vec::new();
    let mut epsilon_dw = None;
    match *family {
        DetectorFamily::Chi2 => {
            for i in 0..=n {
                forms.push(block(i, None, off(i), q, 1.0 / tau));
            }
        }
        DetectorFamily::Cusum { gamma, .. } => {
            // No alarm at step i ⟺ every window r̄_{i−j} … r̄_i has
            // Σ r̄ᵀr̄ < τ + γ(j+1).
            for i in 0..=n {
                for j in 0..=i {
                    forms.push(block(i, Some(j), off(i), q * (j + 1), 1.0 / (tau + gamma * (j + 1) as f64)));
                }
            }
        }
        DetectorFamily::Mewma { beta } => {
            let coeff = (2.0 - beta) / (beta * tau);
            for i in 0..=n {
                let mut v = Matrix::zeros(dim, q);
                for k in 0..=i {
                    let w = beta * (1.0 - beta).powi((i - k) as i32);
                    for c in 0..q {
                        v[(off(k) + c, c)] = w;
                    }
                }
                forms.push(QuadForm { i, j: None, shape: QuadShape::Rank { v, coeff } });
            }
        }
        DetectorFamily::DynWat { ell, .. } => {
            let eps = solve_epsilon_dw(tau, ell, q, m)?;
            epsilon_dw = Some(eps);
            let coeff = 1.0 / ((q + m) as f64 * eps);
            match mode {
                ThetaMode::Literal => {
                    if n < ell + k_prime {
                        return Err(ReachError::HorizonTooShort(format!(
                            "horizon {n} below window plus lag {}",
                            ell + k_prime
                        )));
                    }
                    for i in (ell + k_prime)..=n {
                        forms.push(block(i, None, off(i), q * ell, coeff));
                    }
                }
                ThetaMode::SteadyState => {
                    for i in (ell - 1).min(n)..=n {
                        let len = (i + 1).min(ell);
                        forms.push(block(i, None, off(i), q * len, coeff));
                    }
                }
            }
        }
    }
    Ok(ConstraintSet { n, q, m, dim, family: family.clone(), tau, forms, epsilon_dw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{chi2_step, cusum_step, mewma_step};
    use crate::numerics::{SignalRng, StreamId};

    #[test]
    fn chi2_single_block() {
        let t = build_theta(&DetectorFamily::Chi2, 0, 4.0, 2, 2, 0, ThetaMode::Literal).unwrap();
        assert_eq!(t.forms.len(), 1);
        assert_eq!(t.forms[0].to_matrix(2), Matrix::identity(2, 2) * 0.25);
    }

    #[test]
    fn cusum_small_case() {
        let fam = DetectorFamily::Cusum { gamma: 1.5, reset_on_alarm: true };
        let t = build_theta(&fam, 1, 2.0, 1, 1, 0, ThetaMode::Literal).unwrap();
        assert_eq!(t.forms.len(), 3);
        // R = [r̄_1; r̄_0].
        let m: Vec<Matrix> = t.matrices();
        let expect = [
            Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0 / 3.5]),
            Matrix::from_row_slice(2, 2, &[1.0 / 3.5, 0.0, 0.0, 0.0]),
            Matrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.2]),
        ];
        for (got, want) in m.iter().zip(&expect) {
            assert!((got - want).amax() < 1e-15, "{got} vs {want}");
        }
        assert_eq!((t.forms[0].i, t.forms[0].j), (0, Some(0)));
        assert_eq!((t.forms[1].i, t.forms[1].j), (1, Some(0)));
        assert_eq!((t.forms[2].i, t.forms[2].j), (1, Some(1)));
    }

    #[test]
    fn form_counts() {
        let (q, m, n) = (2, 2, 25);
        let c = |f: DetectorFamily, mode| build_theta(&f, n, 30.0, q, m, 1, mode).unwrap().forms.len();
        assert_eq!(c(DetectorFamily::Chi2, ThetaMode::Literal), n + 1);
        assert_eq!(c(DetectorFamily::Cusum { gamma: 3.0, reset_on_alarm: true }, ThetaMode::Literal), (n + 1) * (n + 2) / 2);
        assert_eq!(c(DetectorFamily::Mewma { beta: 0.3 }, ThetaMode::Literal), n + 1);
        assert_eq!(c(DetectorFamily::DynWat { ell: 20, pairing_delay: 1 }, ThetaMode::Literal), n - 20 - 1 + 1);
    }

    #[test]
    fn dynwat_literal_needs_long_horizon() {
        let fam = DetectorFamily::DynWat { ell: 20, pairing_delay: 1 };
        assert!(matches!(
            build_theta(&fam, 12, 30.0, 2, 2, 0, ThetaMode::Literal),
            Err(ReachError::HorizonTooShort(_))
        ));
        let s = build_theta(&fam, 12, 30.0, 2, 2, 0, ThetaMode::SteadyState).unwrap();
        assert_eq!(s.forms.len(), 1);
        assert_eq!(s.forms[0].shape, QuadShape::Block { offset: 0, len: 26, coeff: 1.0 / (4.0 * s.epsilon_dw.unwrap()) });
    }

    #[test]
    fn epsilon_fixed_point_and_limit() {
        let (ell, q, m) = (20, 2, 2);
        let d = q + m;
        let c = wishart_constant(d, ell).unwrap();
        let e0 = 2.0 * (ell - 1 - d) as f64;
        let tau = epsilon_rhs(e0, ell, d, c);
        let e = solve_epsilon_dw(tau, ell, q, m).unwrap();
        assert!((e - e0).abs() < 1e-8);
        assert!((epsilon_rhs(e, ell, d, c) - tau).abs() < 1e-8);

        let lo = (ell - 1 - d) as f64;
        let fmin = epsilon_rhs(lo, ell, d, c);
        let e = solve_epsilon_dw(fmin + 1e-12, ell, q, m).unwrap();
        assert!((e - lo).abs() < 1e-4, "{e}");
        assert!(matches!(
            solve_epsilon_dw(fmin - 1.0, ell, q, m),
            Err(ReachError::ThresholdBelowMinimum { .. })
        ));
    }

    fn stacked(seq: &[[f64; 2]]) -> Vec<f64> {
        seq.iter().rev().flat_map(|r| r.iter().copied()).collect()
    }

    #[test]
    fn theta_matches_detector_replay() {
        let n = 7;
        let tau = 6.0;
        let fams = [
            DetectorFamily::Chi2,
            DetectorFamily::Cusum { gamma: 2.5, reset_on_alarm: true },
            DetectorFamily::Mewma { beta: 0.35 },
        ];
        for fam in fams {
            let theta = build_theta(&fam, n, tau, 2, 2, 0, ThetaMode::Literal).unwrap();
            let mut rng = SignalRng::new(77, StreamId::Test);
            let mut inside = 0;
            for _ in 0..10_000 {
                let scale = 0.3 + 1.2 * rng.uniform();
                let seq: Vec<[f64; 2]> =
                    (0..=n).map(|_| [scale * rng.standard_normal(), scale * rng.standard_normal()]).collect();
                let mut s = 0.0;
                let mut g = [0.0, 0.0];
                let alarm = seq.iter().any(|r| match fam {
                    DetectorFamily::Chi2 => chi2_step(r, tau).alarm,
                    DetectorFamily::Cusum { gamma, .. } => cusum_step(&mut s, r, gamma, tau, true).alarm,
                    DetectorFamily::Mewma { beta } => mewma_step(&mut g, r, beta, tau).alarm,
                    DetectorFamily::DynWat { .. } => unreachable!(),
                });
                let member = theta.contains(&stacked(&seq));
                assert_eq!(member, !alarm, "{}", fam.label());
                inside += member as usize;
            }
            assert!(inside > 500 && inside < 9500, "{}: {inside}", fam.label());
        }
    }
}
