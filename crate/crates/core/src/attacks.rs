//! Sensor attacks plugged into the simulator's attack hook.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti_sim::{AttackHook, SystemSpec};
use crate::numerics::{serde_rows, sym_sqrt, Matrix, NumericsError, SignalRng, StreamId, SymMatrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("{name} has shape {rows}x{cols}, expected {expected}x{expected}")]
    Shape { name: &'static str, rows: usize, cols: usize, expected: usize },
    #[error("initial false state has length {0}, expected {1}")]
    InitialState(usize, usize),
    #[error("{0} is not a valid covariance: {1}")]
    Covariance(&'static str, NumericsError),
}

/// Attack configuration as it appears in experiment files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AttackModel {
    None,
    /// `v_n ~ N(0, Σ_v)`, independent across steps.
    GaussianNoise {
        #[serde(rename = "Sigma_v", with = "serde_rows")]
        sigma_v: Matrix,
    },
    /// Replaces the measurement with that of a simulated false state,
    /// `v_n = −(Cx_n + z_n) + Cξ_n + ζ_n`, `ξ_{n+1} = (A+BK)ξ_n + ω_n`.
    /// Missing covariances default to the plant's own `Σ_w`, `Σ_z`.
    FalseState {
        #[serde(rename = "Sigma_omega", default, with = "serde_rows::option")]
        sigma_omega: Option<Matrix>,
        #[serde(rename = "Sigma_zeta", default, with = "serde_rows::option")]
        sigma_zeta: Option<Matrix>,
        #[serde(default)]
        xi0: Option<Vec<f64>>,
    },
}

impl AttackModel {
    pub fn false_state_default() -> Self {
        AttackModel::FalseState { sigma_omega: None, sigma_zeta: None, xi0: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackModel::None => "none",
            AttackModel::GaussianNoise { .. } => "gaussian_noise",
            AttackModel::FalseState { .. } => "false_state",
        }
    }

    /// Instantiates the attacker. Its noise comes from streams of `seed`
    /// disjoint from the plant's; the attack stays silent before
    /// `activation_step`.
    pub fn build(&self, spec: &SystemSpec, seed: u64, activation_step: u64) -> Result<Attacker, AttackError> {
        let kind = match self {
            AttackModel::None => AttackerKind::None,
            AttackModel::GaussianNoise { sigma_v } => AttackerKind::Noise {
                factor: covariance_factor("Sigma_v", sigma_v, spec.q())?,
                rng: SignalRng::new(seed, StreamId::AttackMeasurement),
            },
            AttackModel::FalseState { sigma_omega, sigma_zeta, xi0 } => {
                let so = sigma_omega.as_ref().unwrap_or(&spec.sigma_w);
                let sz = sigma_zeta.as_ref().unwrap_or(&spec.sigma_z);
                let xi = match xi0 {
                    Some(v) if v.len() != spec.p() => return Err(AttackError::InitialState(v.len(), spec.p())),
                    Some(v) => Vector::from_column_slice(v),
                    None => Vector::zeros(spec.p()),
                };
                AttackerKind::FalseState(FalseStateAttacker {
                    xi,
                    dynamics: spec.closed_loop_controller(),
                    omega_factor: covariance_factor("Sigma_omega", so, spec.p())?,
                    zeta_factor: covariance_factor("Sigma_zeta", sz, spec.q())?,
                    omega_rng: SignalRng::new(seed, StreamId::AttackProcess),
                    zeta_rng: SignalRng::new(seed, StreamId::AttackMeasurement),
                })
            }
        };
        Ok(Attacker { kind, activation_step })
    }
}

fn covariance_factor(name: &'static str, m: &Matrix, dim: usize) -> Result<Matrix, AttackError> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(AttackError::Shape { name, rows: m.nrows(), cols: m.ncols(), expected: dim });
    }
    let s = SymMatrix::new(m.clone()).map_err(|e| AttackError::Covariance(name, e))?;
    Ok(sym_sqrt(&s).map_err(|e| AttackError::Covariance(name, e))?.into_matrix())
}

/// `v = 0`.
pub fn attack_none(q: usize) -> Vector {
    Vector::zeros(q)
}

/// One draw of `N(0, Σ_v)` given `factor = Σ_v^{1/2}`.
pub fn attack_noise_step(rng: &mut SignalRng, factor: &Matrix) -> Vector {
    rng.gaussian(factor)
}

/// `v = −(Cx + z) + Cξ + ζ`.
pub fn false_state_signal(c: &Matrix, xi: &Vector, zeta: &Vector, x: &Vector, z: &Vector) -> Vector {
    c * xi + zeta - (c * x + z)
}

#[derive(Debug, Clone)]
pub struct FalseStateAttacker {
    pub xi: Vector,
    dynamics: Matrix,
    omega_factor: Matrix,
    zeta_factor: Matrix,
    omega_rng: SignalRng,
    zeta_rng: SignalRng,
}

impl FalseStateAttacker {
    /// Emits `v_n` and advances `ξ`.
    pub fn step(&mut self, c: &Matrix, x: &Vector, z: &Vector) -> Vector {
        let zeta = self.zeta_rng.gaussian(&self.zeta_factor);
        let v = false_state_signal(c, &self.xi, &zeta, x, z);
        let omega = self.omega_rng.gaussian(&self.omega_factor);
        self.xi = &self.dynamics * &self.xi + omega;
        v
    }
}

#[derive(Debug, Clone)]
enum AttackerKind {
    None,
    Noise { factor: Matrix, rng: SignalRng },
    FalseState(FalseStateAttacker),
}

#[derive(Debug, Clone)]
pub struct Attacker {
    kind: AttackerKind,
    activation_step: u64,
}

impl Attacker {
    pub fn false_state(&self) -> Option<&FalseStateAttacker> {
        match &self.kind {
            AttackerKind::FalseState(f) => Some(f),
            _ => None,
        }
    }
}

impl AttackHook for Attacker {
    fn signal(&mut self, n: u64, x: &Vector, z: &Vector, spec: &SystemSpec) -> Vector {
        if n < self.activation_step {
            return attack_none(spec.q());
        }
        match &mut self.kind {
            AttackerKind::None => attack_none(spec.q()),
            AttackerKind::Noise { factor, rng } => attack_noise_step(rng, factor),
            AttackerKind::FalseState(f) => f.step(&spec.c, x, z),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti_sim::{derive_covariances, fixtures::murguia2d, simulate, NoAttack, Simulator};

    #[test]
    fn none_is_zero_and_matches_unattacked_run() {
        assert_eq!(attack_none(3), Vector::zeros(3));
        let spec = murguia2d();
        let d = derive_covariances(&spec).unwrap();
        let mut att = AttackModel::None.build(&spec, 4, 0).unwrap();
        let a = simulate(&spec, &d, &mut att, 300, 4, true, true).unwrap();
        let b = simulate(&spec, &d, &mut NoAttack, 300, 4, true, true).unwrap();
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn zero_noise_attack_is_invisible() {
        let spec = murguia2d();
        let d = derive_covariances(&spec).unwrap();
        let model = AttackModel::GaussianNoise { sigma_v: Matrix::zeros(2, 2) };
        let mut att = model.build(&spec, 4, 0).unwrap();
        let a = simulate(&spec, &d, &mut att, 300, 4, false, false).unwrap();
        let b = simulate(&spec, &d, &mut NoAttack, 300, 4, false, false).unwrap();
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn noise_attack_sample_covariance() {
        let mut rng = SignalRng::new(3, StreamId::AttackMeasurement);
        let f = Matrix::identity(2, 2);
        let n = 100_000;
        let mut cov = Matrix::zeros(2, 2);
        for _ in 0..n {
            let v = attack_noise_step(&mut rng, &f);
            cov += &v * v.transpose();
        }
        cov /= n as f64;
        assert!((cov - Matrix::identity(2, 2)).norm() / 2f64.sqrt() < 0.05);
    }

    #[test]
    fn false_state_cancels_when_copying_the_plant() {
        let c = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]);
        let x = Vector::from_vec(vec![0.3, -1.2]);
        let z = Vector::from_vec(vec![0.05, 0.7]);
        assert_eq!(false_state_signal(&c, &x, &z, &x, &z), Vector::zeros(2));
    }

    #[test]
    fn silent_false_state_feeds_zero_measurement() {
        let spec = murguia2d();
        let d = derive_covariances(&spec).unwrap();
        let model = AttackModel::FalseState {
            sigma_omega: Some(Matrix::zeros(2, 2)),
            sigma_zeta: Some(Matrix::zeros(2, 2)),
            xi0: None,
        };
        let mut att = model.build(&spec, 9, 0).unwrap();
        let out = simulate(&spec, &d, &mut att, 200, 9, false, true).unwrap();
        for rec in out.log.unwrap() {
            assert!(rec.y.iter().all(|v| v.abs() < 1e-12), "{:?}", rec.y);
        }
    }

    #[test]
    fn false_state_measurement_identity() {
        let spec = murguia2d();
        let d = derive_covariances(&spec).unwrap();
        let mut att = AttackModel::false_state_default().build(&spec, 2, 0).unwrap();
        let mut sim = Simulator::new(&spec, &d, 2, true).unwrap();
        for _ in 0..500 {
            let xi = att.false_state().unwrap().xi.clone();
            // Replay ζ with a cloned generator to know what the attacker drew.
            let mut probe = att.clone();
            let zero = Vector::zeros(2);
            let v_probe = probe.signal(sim.state().n, &zero, &zero, &spec);
            let zeta = v_probe - &spec.c * &xi;
            let rec = sim.step(&mut att);
            let expected = &spec.c * &xi + zeta;
            for i in 0..2 {
                assert!((rec.y[i] - expected[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activation_step_delays_attack() {
        let spec = murguia2d();
        let d = derive_covariances(&spec).unwrap();
        let model = AttackModel::GaussianNoise { sigma_v: Matrix::identity(2, 2) };
        let mut att = model.build(&spec, 1, 50).unwrap();
        let out = simulate(&spec, &d, &mut att, 100, 1, false, true).unwrap();
        let log = out.log.unwrap();
        assert!(log[..50].iter().all(|r| r.v.iter().all(|v| *v == 0.0)));
        assert!(log[50..].iter().any(|r| r.v.iter().any(|v| *v != 0.0)));
    }

    #[test]
    fn bad_covariance_is_rejected() {
        let spec = murguia2d();
        let model = AttackModel::GaussianNoise { sigma_v: Matrix::identity(3, 3) };
        assert!(matches!(model.build(&spec, 0, 0), Err(AttackError::Shape { .. })));
    }
}
