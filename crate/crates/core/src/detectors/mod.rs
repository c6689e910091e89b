//! Residual-based anomaly detectors as streaming state machines. Every
//! detector maps the residual history to a statistic and raises an alarm
//! when that statistic reaches its threshold.

mod stats;

pub use stats::{
    chi2_step, cusum_step, dynwat_preview, dynwat_step, mewma_step, wishart_constant, wishart_nll, DynWatWindow, StepOutcome,
    DYNWAT_RECOMPUTE_EVERY,
};

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

use crate::lti_sim::{DerivedCovariances, ResidualTrace, SystemSpec};
use crate::numerics::{sym_inv_sqrt, Matrix, NumericsError, SymMatrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("invalid forgetting factor: {0}")]
    InvalidForgettingFactor(String),
    #[error("window length {ell} too short, need at least {min}")]
    WindowTooShort { ell: usize, min: usize },
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("matrix is not positive definite")]
    NotPd,
    #[error("watermark covariance must be positive definite for the watermark detector")]
    WatermarkRankDeficient,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn default_true() -> bool {
    true
}

fn default_delay() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DetectorFamily {
    Chi2,
    Cusum {
        gamma: f64,
        #[serde(default = "default_true")]
        reset_on_alarm: bool,
    },
    Mewma {
        beta: f64,
    },
    /// Dynamic watermarking. The residual `r_n` is paired with the watermark
    /// `e_{n−k′−pairing_delay}`; the default delay of one step is the time
    /// an input takes to reach the observer's residual.
    DynWat {
        ell: usize,
        #[serde(default = "default_delay")]
        pairing_delay: usize,
    },
}

impl DetectorFamily {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorFamily::Chi2 => "chi2",
            DetectorFamily::Cusum { .. } => "cusum",
            DetectorFamily::Mewma { .. } => "mewma",
            DetectorFamily::DynWat { .. } => "dynwat",
        }
    }

    /// Short label with parameters, e.g. `cusum(gamma=3)`.
    pub fn label(&self) -> String {
        match self {
            DetectorFamily::Chi2 => "chi2".into(),
            DetectorFamily::Cusum { gamma, .. } => format!("cusum(gamma={gamma})"),
            DetectorFamily::Mewma { beta } => format!("mewma(beta={beta})"),
            DetectorFamily::DynWat { ell, .. } => format!("dynwat(ell={ell})"),
        }
    }

    pub fn needs_watermark(&self) -> bool {
        matches!(self, DetectorFamily::DynWat { .. })
    }

    /// Checks the family parameters against the residual dimension `q` and
    /// input dimension `m`.
    pub fn validate(&self, q: usize, m: usize) -> Result<(), DetectorError> {
        match *self {
            DetectorFamily::Chi2 => Ok(()),
            DetectorFamily::Cusum { gamma, .. } => {
                if gamma > q as f64 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(DetectorError::InvalidForgettingFactor(format!(
                        "CUSUM needs gamma > q = {q}, got {gamma}"
                    )))
                }
            }
            DetectorFamily::Mewma { beta } => {
                if beta > 0.0 && beta <= 1.0 {
                    Ok(())
                } else {
                    Err(DetectorError::InvalidForgettingFactor(format!("MEWMA needs beta in (0, 1], got {beta}")))
                }
            }
            DetectorFamily::DynWat { ell, .. } => {
                let min = q + m + 2;
                if ell >= min {
                    Ok(())
                } else {
                    Err(DetectorError::WindowTooShort { ell, min })
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    #[serde(flatten)]
    pub family: DetectorFamily,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
enum State {
    Chi2,
    Cusum { s: f64 },
    Mewma { g: Vec<f64> },
    DynWat(Box<DynWatState>),
}

#[derive(Debug, Clone)]
struct DynWatState {
    window: DynWatWindow,
    psi_inv_sqrt: Matrix,
    sigma_r_sqrt: Matrix,
    constant: f64,
    shift: usize,
    start: u64,
    e_history: VecDeque<Vector>,
}

impl DynWatState {
    /// `Σ_ψ^{−1/2} [Σ_r^{1/2} r̄; e]`.
    fn psi(&self, r_bar: &[f64], e_lag: &Vector) -> Vector {
        let r = &self.sigma_r_sqrt * Vector::from_column_slice(r_bar);
        let joint = Vector::from_iterator(r.len() + e_lag.len(), r.iter().chain(e_lag.iter()).copied());
        &self.psi_inv_sqrt * joint
    }
}

/// A detector with its streaming state.
#[derive(Debug, Clone)]
pub struct Detector {
    family: DetectorFamily,
    threshold: f64,
    state: State,
    initial: State,
    n: u64,
}

impl Detector {
    /// `threshold` may be `+∞` to stream raw statistics.
    pub fn new(
        family: &DetectorFamily,
        threshold: f64,
        spec: &SystemSpec,
        derived: &DerivedCovariances,
    ) -> Result<Self, DetectorError> {
        if !(threshold > 0.0) {
            return Err(DetectorError::InvalidThreshold(threshold));
        }
        let (q, m) = (spec.q(), spec.m());
        family.validate(q, m)?;
        let state = match *family {
            DetectorFamily::Chi2 => State::Chi2,
            DetectorFamily::Cusum { .. } => State::Cusum { s: 0.0 },
            DetectorFamily::Mewma { .. } => State::Mewma { g: vec![0.0; q] },
            DetectorFamily::DynWat { ell, pairing_delay } => {
                if !spec.watermark_full_rank() {
                    return Err(DetectorError::WatermarkRankDeficient);
                }
                let k = derived.k_prime;
                let shift = k + pairing_delay;
                State::DynWat(Box::new(DynWatState {
                    window: DynWatWindow::new(q + m, ell),
                    psi_inv_sqrt: sym_inv_sqrt(&derived.sigma_psi)?.into_matrix(),
                    sigma_r_sqrt: derived.sigma_r_sqrt.as_matrix().clone(),
                    constant: wishart_constant(q + m, ell)?,
                    shift,
                    start: ((ell + k) as u64).max((ell - 1 + shift) as u64),
                    e_history: VecDeque::with_capacity(shift + 1),
                }))
            }
        };
        Ok(Detector { family: family.clone(), threshold, initial: state.clone(), state, n: 0 })
    }

    pub fn from_config(cfg: &DetectorConfig, spec: &SystemSpec, derived: &DerivedCovariances) -> Result<Self, DetectorError> {
        Detector::new(&cfg.family, cfg.threshold, spec, derived)
    }

    pub fn family(&self) -> &DetectorFamily {
        &self.family
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// First time index with a possibly nonzero statistic.
    pub fn warmup(&self) -> u64 {
        match &self.state {
            State::DynWat(s) => s.start,
            _ => 0,
        }
    }

    pub fn reset(&mut self) {
        self.state = self.initial.clone();
        self.n = 0;
    }

    /// Consumes `r̄_n` and the watermark `e_n` applied at the same step.
    pub fn step(&mut self, r_bar: &[f64], e: &[f64]) -> StepOutcome {
        let tau = self.threshold;
        let n = self.n;
        self.n += 1;
        match (&mut self.state, &self.family) {
            (State::Chi2, _) => chi2_step(r_bar, tau),
            (State::Cusum { s }, DetectorFamily::Cusum { gamma, reset_on_alarm }) => {
                cusum_step(s, r_bar, *gamma, tau, *reset_on_alarm)
            }
            (State::Mewma { g }, DetectorFamily::Mewma { beta }) => mewma_step(g, r_bar, *beta, tau),
            (State::DynWat(st), DetectorFamily::DynWat { ell, .. }) => {
                st.e_history.push_back(Vector::from_column_slice(e));
                let e_lag = if st.e_history.len() > st.shift {
                    st.e_history.pop_front().expect("nonempty")
                } else {
                    Vector::zeros(e.len())
                };
                let psi = st.psi(r_bar, &e_lag);
                dynwat_step(&mut st.window, psi, *ell, st.constant, tau, n >= st.start)
            }
            _ => unreachable!("detector state matches its family"),
        }
    }

    /// Outcome that `step(r_bar, e)` would return, leaving the state as is.
    pub fn peek(&self, r_bar: &[f64], e: &[f64]) -> StepOutcome {
        let tau = self.threshold;
        match (&self.state, &self.family) {
            (State::Chi2, _) => chi2_step(r_bar, tau),
            (State::Cusum { s }, DetectorFamily::Cusum { gamma, reset_on_alarm }) => {
                cusum_step(&mut s.clone(), r_bar, *gamma, tau, *reset_on_alarm)
            }
            (State::Mewma { g }, DetectorFamily::Mewma { beta }) => mewma_step(&mut g.clone(), r_bar, *beta, tau),
            (State::DynWat(st), DetectorFamily::DynWat { ell, .. }) => {
                let e_lag = if st.e_history.len() + 1 > st.shift {
                    st.e_history.front().cloned().unwrap_or_else(|| Vector::from_column_slice(e))
                } else {
                    Vector::zeros(e.len())
                };
                let psi = st.psi(r_bar, &e_lag);
                dynwat_preview(&st.window, &psi, *ell, st.constant, tau, self.n >= st.start)
            }
            _ => unreachable!("detector state matches its family"),
        }
    }

    /// Statistic of every step of `trace` (state reset first).
    pub fn statistics(&mut self, trace: &ResidualTrace) -> Vec<f64> {
        self.reset();
        (0..trace.len()).map(|n| self.step(trace.r_bar(n), trace.e(n)).statistic).collect()
    }

    /// Fraction of steps `skip..` that alarm.
    pub fn alarm_rate(&mut self, trace: &ResidualTrace, skip: usize) -> f64 {
        self.reset();
        let mut alarms = 0usize;
        let mut counted = 0usize;
        for n in 0..trace.len() {
            let o = self.step(trace.r_bar(n), trace.e(n));
            if n >= skip {
                counted += 1;
                alarms += o.alarm as usize;
            }
        }
        if counted == 0 {
            0.0
        } else {
            alarms as f64 / counted as f64
        }
    }
}

/// `Σ_ψ^{−1/2}` for callers that build `ψ` themselves.
pub fn psi_inv_sqrt(derived: &DerivedCovariances) -> Result<SymMatrix, DetectorError> {
    Ok(sym_inv_sqrt(&derived.sigma_psi)?)
}
