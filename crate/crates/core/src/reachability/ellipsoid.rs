use serde::{Deserialize, Serialize};

use super::theta::ConstraintSet;
use super::ReachError;
use crate::detectors::DetectorFamily;
use crate::lti_sim::{DerivedCovariances, SystemSpec};
use crate::numerics::{
    ellipse_perimeter, ellipsoid_distance, mc_volume, operator_norm, solve_small_sdp, symmetric_eigen, AffineMatrix,
    AxisBox, LinearInequality, Matrix, SdpOptions, SdpProblem, SdpStatus, SignalRng, StreamId, SymMatrix,
    VolumeEstimate,
};

/// `Ā_n = [LΣ_r^{1/2}, ALΣ_r^{1/2}, …, AⁿLΣ_r^{1/2}]`, so that
/// `δ^{(a)}_{n+1} = Ā_n R_n`.
pub fn build_abar(spec: &SystemSpec, derived: &DerivedCovariances, n: usize) -> Matrix {
    let (p, q) = (spec.p(), spec.q());
    let mut out = Matrix::zeros(p, q * (n + 1));
    let mut blk = &spec.l * derived.sigma_r_sqrt.as_matrix();
    for k in 0..=n {
        out.view_mut((0, q * k), (p, q)).copy_from(&blk);
        blk = &spec.a * blk;
    }
    out
}

/// Per-residual bound `σ` with `‖R‖ < σ` on the whole set.
pub fn residual_bound(theta: &ConstraintSet) -> f64 {
    let big_n = (theta.n + 1) as f64;
    let tau = theta.tau;
    let per_step = match theta.family {
        DetectorFamily::Chi2 => tau,
        DetectorFamily::Cusum { gamma, .. } => tau + gamma,
        DetectorFamily::Mewma { beta } => tau * (2.0 - beta) / beta,
        DetectorFamily::DynWat { .. } => (theta.q + theta.m) as f64 * theta.epsilon_dw.unwrap_or(f64::NAN),
    };
    (big_n * per_step).sqrt()
}

/// `η = ‖map‖·σ`, the radius of a ball containing `map(Θ)`.
pub fn bounding_ball_radius(theta: &ConstraintSet, map: &Matrix) -> f64 {
    operator_norm(map) * residual_bound(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EllipsoidObjective {
    /// Maximize `log det H_n` subject to the S-procedure certificate.
    #[default]
    MinVolume,
    /// Minimize `∫_{𝓑_η} (δᵀHδ + c) dδ`, the weighted-integral form.
    BallIntegral,
}

#[derive(Debug, Clone)]
pub struct OuterOptions {
    pub objective: EllipsoidObjective,
    pub soundness_samples: usize,
    pub seed: u64,
    pub sdp: SdpOptions,
}

impl Default for OuterOptions {
    fn default() -> Self {
        OuterOptions { objective: EllipsoidObjective::MinVolume, soundness_samples: 10_000, seed: 0, sdp: SdpOptions::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverDiagnostics {
    pub objective_value: f64,
    pub status: String,
    pub gap_bound: f64,
    pub min_eigenvalue: f64,
    pub newton_iterations: usize,
    /// Largest `(ĀR)ᵀH_n(ĀR)` over the soundness samples.
    pub max_sampled_level: f64,
}

/// `{δ : δᵀHδ ≤ 1}`.
#[derive(Debug, Clone, Serialize)]
pub struct OuterEllipsoid {
    pub h: SymMatrix,
    pub n: usize,
    pub tau: f64,
    pub detector: String,
    pub objective: EllipsoidObjective,
    pub eta: f64,
    pub lambda: Vec<f64>,
    pub nu: Option<f64>,
    pub c: Option<f64>,
    pub diagnostics: SolverDiagnostics,
}

/// Symmetric `p×p` basis: `E_ab` for `a ≤ b`.
fn sym_basis(p: usize) -> Vec<SymMatrix> {
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for a in 0..p {
        for b in a..p {
            let mut m = Matrix::zeros(p, p);
            m[(a, b)] = 1.0;
            m[(b, a)] = 1.0;
            out.push(SymMatrix::from_symmetric_part(m));
        }
    }
    out
}

fn assemble(basis: &[SymMatrix], h: &[f64]) -> SymMatrix {
    let p = basis[0].dim();
    let mut m = Matrix::zeros(p, p);
    for (b, v) in basis.iter().zip(h) {
        m += b.as_matrix() * *v;
    }
    SymMatrix::from_symmetric_part(m)
}

/// Strictly feasible `h0·I` scale for `ΣλQ − h0·ĀᵀĀ ≻ 0` at uniform `λ`.
fn interior_scale(abar: &Matrix, q_sum: &Matrix) -> f64 {
    let e = symmetric_eigen(&SymMatrix::from_symmetric_part(q_sum.clone()));
    let an = operator_norm(abar);
    if !(e.min() > 0.0) || an == 0.0 {
        return 0.0;
    }
    0.5 * e.min() / (an * an)
}

/// Outer ellipsoid of `Ā Θ` via the S-procedure: a feasible point certifies
/// `RᵀĀᵀH_nĀR ≤ Σλ_i RᵀQ_iR ≤ 1` on `Θ`.
pub fn outer_ellipsoid(
    abar: &Matrix,
    theta: &ConstraintSet,
    eta: f64,
    opts: &OuterOptions,
) -> Result<OuterEllipsoid, ReachError> {
    let p = abar.nrows();
    if abar.ncols() != theta.dim {
        return Err(ReachError::InvalidParameters(format!(
            "map has {} columns, constraint set has dimension {}",
            abar.ncols(),
            theta.dim
        )));
    }
    if theta.forms.is_empty() {
        return Err(ReachError::InvalidParameters("empty constraint set".into()));
    }
    let basis = sym_basis(p);
    let nh = basis.len();
    let qs: Vec<SymMatrix> = theta.matrices().into_iter().map(SymMatrix::from_symmetric_part).collect();
    let nl = qs.len();
    let lifted: Vec<SymMatrix> = basis.iter().map(|e| e.congruence(&abar.transpose())).collect();
    let lam_uniform = 1.0 / (2.0 * nl as f64);
    let mut q_sum = Matrix::zeros(theta.dim, theta.dim);
    for q in &qs {
        q_sum += q.as_matrix() * lam_uniform;
    }
    let h0 = interior_scale(abar, &q_sum);

    let (problem, x0, lam_off) = match opts.objective {
        EllipsoidObjective::MinVolume => {
            // x = [h, λ].
            let mut pr = SdpProblem::new(nh + nl);
            let mut lmi = AffineMatrix::new(SymMatrix::zeros(theta.dim));
            for (k, l) in lifted.iter().enumerate() {
                lmi.add_term(k, l.scale(-1.0));
            }
            for (i, q) in qs.iter().enumerate() {
                lmi.add_term(nh + i, q.clone());
                pr.linear.push(LinearInequality::new(0.0, vec![(nh + i, 1.0)]));
            }
            pr.lmis.push(lmi);
            pr.linear.push(LinearInequality::new(1.0, (0..nl).map(|i| (nh + i, -1.0)).collect()));
            let mut g = AffineMatrix::new(SymMatrix::zeros(p));
            for (k, b) in basis.iter().enumerate() {
                g.add_term(k, b.clone());
            }
            pr.log_det_terms.push((1.0, g));
            let mut x0 = vec![0.0; nh + nl];
            write_identity(&mut x0, p, h0);
            x0[nh..].fill(lam_uniform);
            (pr, x0, nh)
        }
        EllipsoidObjective::BallIntegral => {
            // x = [h, c, ν, λ].
            let (ic, inu) = (nh, nh + 1);
            let off = nh + 2;
            let mut pr = SdpProblem::new(off + nl);
            let mut lmi = AffineMatrix::new(SymMatrix::zeros(theta.dim));
            for (k, l) in lifted.iter().enumerate() {
                lmi.add_term(k, l.clone());
            }
            for (i, q) in qs.iter().enumerate() {
                lmi.add_term(off + i, q.clone());
                pr.linear.push(LinearInequality::new(0.0, vec![(off + i, 1.0)]));
            }
            pr.lmis.push(lmi);
            let mut ball = AffineMatrix::new(SymMatrix::zeros(p));
            for (k, b) in basis.iter().enumerate() {
                ball.add_term(k, b.clone());
            }
            ball.add_term(inu, SymMatrix::identity(p).scale(1.0 / (eta * eta)));
            pr.lmis.push(ball);
            let mut cl = vec![(ic, 1.0)];
            cl.extend((0..nl).map(|i| (off + i, -1.0)));
            pr.linear.push(LinearInequality::new(-1.0, cl));
            pr.linear.push(LinearInequality::new(0.0, vec![(ic, 1.0), (inu, -1.0)]));
            pr.linear.push(LinearInequality::new(0.0, vec![(inu, 1.0)]));
            let w = eta * eta / (p as f64 + 2.0);
            let mut k = 0;
            for a in 0..p {
                for b in a..p {
                    if a == b {
                        pr.objective[k] = w;
                    }
                    k += 1;
                }
            }
            pr.objective[ic] = 1.0;
            let c0 = 2.0 + nl as f64 * lam_uniform;
            let hs = h0.min(0.25 * c0 / (eta * eta));
            let mut x0 = vec![0.0; off + nl];
            write_identity(&mut x0, p, -hs);
            x0[ic] = c0;
            x0[inu] = 2.0 * hs * eta * eta;
            x0[off..].fill(lam_uniform);
            (pr, x0, off)
        }
    };
    let mut sdp_opts = opts.sdp.clone();
    if sdp_opts.initial_point.is_none() && h0 > 0.0 && problem.min_slack(&x0) > 0.0 {
        sdp_opts.initial_point = Some(x0);
    }
    let sol = solve_small_sdp(&problem, &sdp_opts).map_err(|e| match e {
        crate::numerics::NumericsError::Infeasible(m) => ReachError::SolverInfeasible(m),
        other => ReachError::Numerics(other),
    })?;
    let h_raw = assemble(&basis, &sol.x[..nh]);
    let lambda = sol.x[lam_off..].to_vec();
    let (h, nu, c) = match opts.objective {
        EllipsoidObjective::MinVolume => (h_raw, None, None),
        EllipsoidObjective::BallIntegral => {
            let c = sol.x[nh];
            if !(c > 1.0 + 1e-9) {
                return Err(ReachError::Degenerate { c });
            }
            (h_raw.scale(1.0 / (1.0 - c)), Some(sol.x[nh + 1]), Some(c))
        }
    };
    let eig = symmetric_eigen(&h);
    if !(eig.min() > 0.0) {
        return Err(ReachError::NotPd(format!("smallest eigenvalue {:.3e}", eig.min())));
    }
    let level = soundness_level(abar, theta, &h, opts.soundness_samples, opts.seed);
    if level > 1.0 + 1e-6 {
        return Err(ReachError::SoundnessViolation { level });
    }
    let status = match sol.status {
        SdpStatus::Optimal => "optimal",
        SdpStatus::Stalled => "stalled",
        SdpStatus::MaxIterations => "max_iterations",
    };
    Ok(OuterEllipsoid {
        h,
        n: theta.n + 1,
        tau: theta.tau,
        detector: theta.family.label(),
        objective: opts.objective,
        eta,
        lambda,
        nu,
        c,
        diagnostics: SolverDiagnostics {
            objective_value: sol.objective,
            status: status.into(),
            gap_bound: sol.gap_bound,
            min_eigenvalue: sol.min_eigenvalue,
            newton_iterations: sol.newton_iterations,
            max_sampled_level: level,
        },
    })
}

fn write_identity(x: &mut [f64], p: usize, v: f64) {
    let mut k = 0;
    for a in 0..p {
        for b in a..p {
            if a == b {
                x[k] = v;
            }
            k += 1;
        }
    }
}

/// Largest `(ĀR)ᵀH(ĀR)` over random points pushed onto the boundary of `Θ`.
pub fn soundness_level(abar: &Matrix, theta: &ConstraintSet, h: &SymMatrix, samples: usize, seed: u64) -> f64 {
    let mut rng = SignalRng::new(seed, StreamId::MonteCarlo);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let r: Vec<f64> = (0..theta.dim).map(|_| rng.standard_normal()).collect();
        let m = theta.max_value(&r);
        if !(m > 0.0) {
            continue;
        }
        let s = (1.0 - 1e-12) / m.sqrt();
        let d = abar * crate::numerics::Vector::from_iterator(theta.dim, r.iter().map(|v| v * s));
        worst = worst.max((d.transpose() * h.as_matrix() * &d)[(0, 0)]);
    }
    worst
}

/// Dilation radius `‖Aⁿ‖ / (√s₁(H)(1 − ‖Aⁿ‖))`.
pub fn dilate(h: &SymMatrix, a: &Matrix, n: usize) -> Result<f64, ReachError> {
    let an = operator_norm(&a.pow(n as u32));
    if an >= 1.0 {
        return Err(ReachError::HorizonTooShort(format!("‖A^{n}‖ = {an:.4} is not below 1")));
    }
    if an == 0.0 {
        return Ok(0.0);
    }
    let s1 = symmetric_eigen(h).min();
    if !(s1 > 0.0) {
        return Err(ReachError::NotPd("ellipsoid matrix".into()));
    }
    Ok(an / (s1.sqrt() * (1.0 - an)))
}

#[derive(Debug, Clone, Copy)]
pub struct VolumeOptions {
    pub samples: u64,
    pub seed: u64,
}

impl Default for VolumeOptions {
    fn default() -> Self {
        VolumeOptions { samples: 1_000_000, seed: 0 }
    }
}

/// Measure of `{δᵀHδ ≤ 1} ⊕ 𝓑_ε`: exact in one and two dimensions, Monte
/// Carlo above.
pub fn volume(h: &SymMatrix, eps: f64, opts: &VolumeOptions) -> Result<VolumeEstimate, ReachError> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(ReachError::InvalidParameters(format!("dilation must be finite and nonnegative, got {eps}")));
    }
    let eig = symmetric_eigen(h);
    if !(eig.min() > 0.0) {
        return Err(ReachError::NotPd(format!("smallest eigenvalue {:.3e}", eig.min())));
    }
    let axes: Vec<f64> = eig.values.iter().map(|l| 1.0 / l.sqrt()).collect();
    match h.dim() {
        1 => Ok(VolumeEstimate::exact(2.0 * (axes[0] + eps))),
        2 => {
            let area = std::f64::consts::PI * axes[0] * axes[1];
            let per = ellipse_perimeter(axes[0], axes[1]);
            Ok(VolumeEstimate::exact(area + per * eps + std::f64::consts::PI * eps * eps))
        }
        p => {
            let inv = eig.map(|l| 1.0 / l);
            let half: Vec<f64> = (0..p).map(|k| inv[(k, k)].sqrt() + eps).collect();
            let bounds = AxisBox::centered(p, &half)?;
            Ok(mc_volume(|x| ellipsoid_distance(&eig, x) <= eps, &bounds, opts.samples, opts.seed))
        }
    }
}
