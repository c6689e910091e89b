use serde::Serialize;

use super::{LtiError, ResidualTrace, SystemSpec};
use crate::numerics::{solve_discrete_lyapunov, sym_inv_sqrt, sym_sqrt, Matrix, SymMatrix};

/// Steady-state second moments of the unattacked loop.
#[derive(Debug, Clone, Serialize)]
pub struct DerivedCovariances {
    /// Observer error covariance, `Σ_δ = (A+LC)Σ_δ(A+LC)ᵀ + Σ_w + LΣ_zLᵀ`.
    pub sigma_delta: SymMatrix,
    /// Residual covariance `CΣ_δCᵀ + Σ_z`.
    pub sigma_r: SymMatrix,
    pub sigma_r_sqrt: SymMatrix,
    pub sigma_r_inv_sqrt: SymMatrix,
    /// `diag(Σ_r, Σ_e)`.
    pub sigma_psi: SymMatrix,
    /// Smallest `k` with `C(A+BK)^k B ≠ 0`.
    pub k_prime: usize,
}

/// Smallest `k ≥ 0` with `C(A+BK)^k B` nonzero (entries above 1e-12),
/// searching at most `p·q` powers.
pub fn watermark_lag(spec: &SystemSpec) -> Result<usize, LtiError> {
    let cap = (spec.p() * spec.q()).max(1);
    let abk = spec.closed_loop_controller();
    let mut m = spec.b.clone();
    for k in 0..cap {
        let cm = &spec.c * &m;
        if cm.iter().any(|v| v.abs() > 1e-12) {
            return Ok(k);
        }
        m = &abk * m;
    }
    Err(LtiError::KPrimeUndefined { cap })
}

pub fn derive_covariances(spec: &SystemSpec) -> Result<DerivedCovariances, LtiError> {
    let report = super::validate_spec(spec);
    if !report.is_ok() {
        return Err(LtiError::InvalidSpec(report));
    }
    let f = spec.closed_loop_observer();
    let q = SymMatrix::from_symmetric_part(&spec.sigma_w + &spec.l * &spec.sigma_z * spec.l.transpose());
    let sigma_delta = solve_discrete_lyapunov(&f, &q)?;
    let sigma_r = SymMatrix::from_symmetric_part(
        &spec.c * sigma_delta.as_matrix() * spec.c.transpose() + &spec.sigma_z,
    );
    let sigma_r_sqrt = sym_sqrt(&sigma_r)?;
    let sigma_r_inv_sqrt = sym_inv_sqrt(&sigma_r)?;
    let (qd, md) = (spec.q(), spec.m());
    let mut psi = Matrix::zeros(qd + md, qd + md);
    psi.view_mut((0, 0), (qd, qd)).copy_from(sigma_r.as_matrix());
    psi.view_mut((qd, qd), (md, md)).copy_from(&spec.sigma_e);
    let k_prime = watermark_lag(spec)?;
    Ok(DerivedCovariances {
        sigma_delta,
        sigma_r,
        sigma_r_sqrt,
        sigma_r_inv_sqrt,
        sigma_psi: SymMatrix::from_symmetric_part(psi),
        k_prime,
    })
}

/// `E[r_n r_{n−1}ᵀ] = C(A+LC)Σ_δCᵀ + CLΣ_z` for the unattacked loop.
pub fn theoretical_lag1(spec: &SystemSpec, derived: &DerivedCovariances) -> Matrix {
    &spec.c * spec.closed_loop_observer() * derived.sigma_delta.as_matrix() * spec.c.transpose()
        + &spec.c * &spec.l * &spec.sigma_z
}

pub const MIN_AUTOCORRELATION_LEN: usize = 1000;

/// Time average of `r_n r_{n−lag}ᵀ`, with `r = Σ_r^{1/2} r̄` rebuilt from
/// the normalized trace.
pub fn residual_autocorrelation(
    trace: &ResidualTrace,
    derived: &DerivedCovariances,
    lag: usize,
) -> Result<Matrix, LtiError> {
    let len = trace.len();
    if len < MIN_AUTOCORRELATION_LEN || len <= lag {
        return Err(LtiError::TraceTooShort { len, min: MIN_AUTOCORRELATION_LEN.max(lag + 1) });
    }
    let q = trace.q;
    let s = derived.sigma_r_sqrt.as_matrix();
    let raw: Vec<Matrix> = (0..len)
        .map(|n| s * Matrix::from_column_slice(q, 1, trace.r_bar(n)))
        .collect();
    let mut acc = Matrix::zeros(q, q);
    for n in lag..len {
        acc += &raw[n] * raw[n - lag].transpose();
    }
    Ok(acc / (len - lag) as f64)
}
