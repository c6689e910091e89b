use serde::Serialize;

use super::{DerivedCovariances, LtiError, SystemSpec};
use crate::numerics::{sym_sqrt, Matrix, SignalRng, StreamId, SymMatrix, Vector};

/// Supplies the sensor attack `v_n` just before the measurement is formed.
/// Implementations see exactly the time index, the true state and the
/// measurement noise of the current step.
pub trait AttackHook {
    fn signal(&mut self, n: u64, x: &Vector, z: &Vector, spec: &SystemSpec) -> Vector;
}

/// The unattacked loop, `v ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoAttack;

impl AttackHook for NoAttack {
    fn signal(&mut self, _n: u64, _x: &Vector, _z: &Vector, spec: &SystemSpec) -> Vector {
        Vector::zeros(spec.q())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub n: u64,
    pub x: Vector,
    pub x_hat: Vector,
    /// Residual-driven observer error `δ^{(a)}_n`.
    pub delta_a: Vector,
}

impl SimState {
    pub fn zero(spec: &SystemSpec) -> Self {
        SimState {
            n: 0,
            x: Vector::zeros(spec.p()),
            x_hat: Vector::zeros(spec.p()),
            delta_a: Vector::zeros(spec.p()),
        }
    }
}

/// All signals of one time step. `delta_a` is the value at step `n`, i.e.
/// driven by `r̄_0 … r̄_{n−1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub n: u64,
    pub x: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    pub e: Vec<f64>,
    pub r: Vec<f64>,
    pub r_bar: Vec<f64>,
    pub delta_a: Vec<f64>,
}

/// Normalized residuals and watermarks of one run, stored flat in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    pub fingerprint: u64,
    pub watermark_on: bool,
    pub seed: u64,
    pub q: usize,
    pub m: usize,
    r_bar: Vec<f64>,
    e: Vec<f64>,
}

impl ResidualTrace {
    pub fn new(fingerprint: u64, watermark_on: bool, seed: u64, q: usize, m: usize) -> Self {
        ResidualTrace { fingerprint, watermark_on, seed, q, m, r_bar: Vec::new(), e: Vec::new() }
    }

    pub fn push(&mut self, r_bar: &[f64], e: &[f64]) {
        assert_eq!(r_bar.len(), self.q);
        assert_eq!(e.len(), self.m);
        self.r_bar.extend_from_slice(r_bar);
        self.e.extend_from_slice(e);
    }

    pub fn len(&self) -> usize {
        self.r_bar.len() / self.q.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.r_bar.is_empty()
    }

    pub fn r_bar(&self, n: usize) -> &[f64] {
        &self.r_bar[n * self.q..(n + 1) * self.q]
    }

    pub fn e(&self, n: usize) -> &[f64] {
        &self.e[n * self.m..(n + 1) * self.m]
    }

    /// Drops the first `k` steps.
    pub fn skip(&self, k: usize) -> ResidualTrace {
        let k = k.min(self.len());
        ResidualTrace {
            r_bar: self.r_bar[k * self.q..].to_vec(),
            e: self.e[k * self.m..].to_vec(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> ResidualTrace {
        ResidualTrace::new(self.fingerprint, self.watermark_on, self.seed, self.q, self.m)
    }
}

fn noise_factor(m: &Matrix) -> Result<Matrix, LtiError> {
    Ok(sym_sqrt(&SymMatrix::from_symmetric_part(m.clone()))?.into_matrix())
}

/// One closed loop with its own noise streams.
pub struct Simulator<'a> {
    spec: &'a SystemSpec,
    derived: &'a DerivedCovariances,
    watermark_on: bool,
    state: SimState,
    w_factor: Matrix,
    z_factor: Matrix,
    e_factor: Matrix,
    l_sr_sqrt: Matrix,
    observer: Matrix,
    w_rng: SignalRng,
    z_rng: SignalRng,
    e_rng: SignalRng,
}

impl<'a> Simulator<'a> {
    pub fn new(
        spec: &'a SystemSpec,
        derived: &'a DerivedCovariances,
        seed: u64,
        watermark_on: bool,
    ) -> Result<Self, LtiError> {
        Ok(Simulator {
            spec,
            derived,
            watermark_on,
            state: SimState::zero(spec),
            w_factor: noise_factor(&spec.sigma_w)?,
            z_factor: noise_factor(&spec.sigma_z)?,
            e_factor: noise_factor(&spec.sigma_e)?,
            l_sr_sqrt: &spec.l * derived.sigma_r_sqrt.as_matrix(),
            observer: spec.closed_loop_observer(),
            w_rng: SignalRng::new(seed, StreamId::ProcessNoise),
            z_rng: SignalRng::new(seed, StreamId::MeasurementNoise),
            e_rng: SignalRng::new(seed, StreamId::Watermark),
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn set_state(&mut self, state: SimState) {
        self.state = state;
    }

    /// Advances the loop by one step and returns that step's signals.
    pub fn step(&mut self, attack: &mut dyn AttackHook) -> StepRecord {
        let spec = self.spec;
        let (x, x_hat) = (&self.state.x, &self.state.x_hat);
        let e = if self.watermark_on {
            self.e_rng.gaussian(&self.e_factor)
        } else {
            Vector::zeros(spec.m())
        };
        let u = &spec.k * x_hat + &e;
        let w = self.w_rng.gaussian(&self.w_factor);
        let z = self.z_rng.gaussian(&self.z_factor);
        let v = attack.signal(self.state.n, x, &z, spec);
        let y = &spec.c * x + &z + &v;
        let r = &spec.c * x_hat - &y;
        let r_bar = self.derived.sigma_r_inv_sqrt.as_matrix() * &r;

        let record = StepRecord {
            n: self.state.n,
            x: x.iter().copied().collect(),
            x_hat: x_hat.iter().copied().collect(),
            u: u.iter().copied().collect(),
            y: y.iter().copied().collect(),
            w: w.iter().copied().collect(),
            z: z.iter().copied().collect(),
            v: v.iter().copied().collect(),
            e: e.iter().copied().collect(),
            r: r.iter().copied().collect(),
            r_bar: r_bar.iter().copied().collect(),
            delta_a: self.state.delta_a.iter().copied().collect(),
        };

        let bu = &spec.b * &u;
        let x_next = &spec.a * x + &bu + &w;
        let x_hat_next = &self.observer * x_hat + &bu - &spec.l * &y;
        let delta_next = &spec.a * &self.state.delta_a + &self.l_sr_sqrt * &r_bar;
        self.state = SimState { n: self.state.n + 1, x: x_next, x_hat: x_hat_next, delta_a: delta_next };
        record
    }
}

pub struct SimOutput {
    pub trace: ResidualTrace,
    pub log: Option<Vec<StepRecord>>,
}

/// Runs `n_steps` from `x₀ = x̂₀ = 0`. Deterministic in `seed`.
pub fn simulate(
    spec: &SystemSpec,
    derived: &DerivedCovariances,
    attack: &mut dyn AttackHook,
    n_steps: usize,
    seed: u64,
    watermark_on: bool,
    keep_log: bool,
) -> Result<SimOutput, LtiError> {
    if n_steps == 0 {
        return Err(LtiError::InvalidArgument("n_steps must be at least 1".into()));
    }
    let mut sim = Simulator::new(spec, derived, seed, watermark_on)?;
    let mut trace = ResidualTrace::new(spec.fingerprint_u64(), watermark_on, seed, spec.q(), spec.m());
    let mut log = keep_log.then(|| Vec::with_capacity(n_steps));
    for _ in 0..n_steps {
        let rec = sim.step(attack);
        trace.push(&rec.r_bar, &rec.e);
        if let Some(l) = log.as_mut() {
            l.push(rec);
        }
    }
    Ok(SimOutput { trace, log })
}

#[cfg(test)]
mod tests {
    use super::super::spec::fixtures::murguia2d;
    use super::super::{derive_covariances, residual_autocorrelation, theoretical_lag1};
    use super::*;

    fn quiet(mut s: SystemSpec) -> SystemSpec {
        s.sigma_w = Matrix::zeros(2, 2);
        s.sigma_z = Matrix::zeros(2, 2);
        s.sigma_e = Matrix::zeros(2, 2);
        s
    }

    #[test]
    fn zero_noise_stays_at_origin() {
        let spec = quiet(murguia2d());
        // Σ_r would be singular without noise; borrow the noisy normalization.
        let derived = derive_covariances(&murguia2d()).unwrap();
        let out = simulate(&spec, &derived, &mut NoAttack, 50, 3, true, true).unwrap();
        for r in out.log.unwrap() {
            assert!(r.x.iter().chain(&r.x_hat).chain(&r.r).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn matched_observer_has_zero_residual() {
        let spec = quiet(murguia2d());
        let derived = derive_covariances(&murguia2d()).unwrap();
        let mut sim = Simulator::new(&spec, &derived, 1, false).unwrap();
        let x0 = Vector::from_vec(vec![1.5, -0.7]);
        sim.set_state(SimState { n: 0, x: x0.clone(), x_hat: x0, delta_a: Vector::zeros(2) });
        for _ in 0..30 {
            let r = sim.step(&mut NoAttack);
            assert!(r.r.iter().all(|v| v.abs() < 1e-14), "{:?}", r.r);
        }
    }

    #[test]
    fn residual_identity_holds() {
        let spec = murguia2d();
        let derived = derive_covariances(&spec).unwrap();
        let out = simulate(&spec, &derived, &mut NoAttack, 200, 11, true, true).unwrap();
        for rec in out.log.unwrap() {
            for i in 0..2 {
                let cd: f64 = (0..2).map(|j| spec.c[(i, j)] * (rec.x_hat[j] - rec.x[j])).sum();
                let expected = cd - rec.z[i] - rec.v[i];
                assert!((rec.r[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_a_matches_stacked_form() {
        let spec = murguia2d();
        let derived = derive_covariances(&spec).unwrap();
        let out = simulate(&spec, &derived, &mut NoAttack, 51, 5, false, true).unwrap();
        let log = out.log.unwrap();
        let lr = &spec.l * derived.sigma_r_sqrt.as_matrix();
        for n in 1..=50usize {
            // δ^{(a)}_n = Σ_{k=0}^{n−1} A^k L Σ^{1/2} r̄_{n−1−k}
            let mut acc = Vector::zeros(2);
            let mut ak = Matrix::identity(2, 2);
            for k in 0..n {
                acc += &ak * &lr * Vector::from_column_slice(&log[n - 1 - k].r_bar);
                ak = &spec.a * ak;
            }
            for i in 0..2 {
                assert!((acc[i] - log[n].delta_a[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let spec = murguia2d();
        let derived = derive_covariances(&spec).unwrap();
        let a = simulate(&spec, &derived, &mut NoAttack, 100, 7, true, false).unwrap().trace;
        let b = simulate(&spec, &derived, &mut NoAttack, 100, 7, true, false).unwrap().trace;
        let c = simulate(&spec, &derived, &mut NoAttack, 100, 8, true, false).unwrap().trace;
        assert_eq!(a, b);
        assert_ne!(a.r_bar(0), c.r_bar(0));
        let one = simulate(&spec, &derived, &mut NoAttack, 1, 7, true, false).unwrap().trace;
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn sample_residual_covariance_matches_derived() {
        let spec = murguia2d();
        let derived = derive_covariances(&spec).unwrap();
        let out = simulate(&spec, &derived, &mut NoAttack, 100_000, 21, false, true).unwrap();
        let log = out.log.unwrap();
        let mut cov = Matrix::zeros(2, 2);
        for rec in &log[1000..] {
            let r = Vector::from_column_slice(&rec.r);
            cov += &r * r.transpose();
        }
        cov /= (log.len() - 1000) as f64;
        let rel = (&cov - derived.sigma_r.as_matrix()).norm() / derived.sigma_r.as_matrix().norm();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn empirical_lag1_matches_theory() {
        let spec = murguia2d();
        let derived = derive_covariances(&spec).unwrap();
        let trace = simulate(&spec, &derived, &mut NoAttack, 1_000_000, 2, false, false)
            .unwrap()
            .trace
            .skip(1000);
        let emp = residual_autocorrelation(&trace, &derived, 1).unwrap();
        let th = theoretical_lag1(&spec, &derived);
        let rel = (&emp - &th).norm() / th.norm();
        assert!(rel < 0.05, "empirical {emp} theoretical {th}");
    }

    #[test]
    fn short_trace_is_rejected() {
        let spec = murguia2d();
        let derived = derive_covariances(&spec).unwrap();
        let t = simulate(&spec, &derived, &mut NoAttack, 10, 2, false, false).unwrap().trace;
        assert!(matches!(
            residual_autocorrelation(&t, &derived, 1),
            Err(LtiError::TraceTooShort { .. })
        ));
    }
}
