//! Empirical threshold / false-alarm-rate tables built from no-attack
//! baselines, and interpolation back from a target rate to a threshold.

mod baseline;

pub use baseline::{read_baseline, write_baseline, BaselineHeader, BASELINE_MAGIC, BASELINE_VERSION};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{Detector, DetectorError, DetectorFamily};
use crate::lti_sim::{simulate, DerivedCovariances, LtiError, NoAttack, ResidualTrace, SystemSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("trace of length {len} is too short for burn-in {burn_in} (need {min})")]
    TraceTooShort { len: usize, burn_in: usize, min: usize },
    #[error("false-alarm rate {target} is not achievable (table covers [{lo}, {hi}])")]
    Unachievable { target: f64, lo: f64, hi: f64 },
    #[error("false-alarm curve increases by {jump:.4} between tau = {tau_lo} and {tau_hi}, beyond sampling noise")]
    NonMonotone { tau_lo: f64, tau_hi: f64, jump: f64 },
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("the watermark detector needs a watermarked baseline")]
    NeedsWatermark,
    #[error("baseline file: {0}")]
    Baseline(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

pub const DEFAULT_BURN_IN: usize = 1000;
pub const DEFAULT_CALIBRATION_STEPS: usize = 1_000_000;

/// Thresholds at which to evaluate the false-alarm rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TauGrid {
    /// Empirical quantiles of the statistic at `levels` survival
    /// probabilities log-spaced between `max_survival` and `min_survival`.
    Quantiles { levels: usize, max_survival: f64, min_survival: f64 },
    Explicit { taus: Vec<f64> },
}

impl Default for TauGrid {
    fn default() -> Self {
        TauGrid::Quantiles { levels: 200, max_survival: 0.5, min_survival: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub grid: TauGrid,
}

fn default_steps() -> usize {
    DEFAULT_CALIBRATION_STEPS
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { n_steps: DEFAULT_CALIBRATION_STEPS, burn_in: DEFAULT_BURN_IN, grid: TauGrid::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaRow {
    pub tau: f64,
    pub fa_rate: f64,
}

/// Threshold / false-alarm pairs for one detector: `tau` strictly
/// increasing, `fa_rate` nonincreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaTable {
    pub detector: DetectorFamily,
    pub rows: Vec<FaRow>,
    pub steps_used: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub trace_fingerprint: u64,
}

impl FaTable {
    pub fn fa_range(&self) -> (f64, f64) {
        let lo = self.rows.iter().map(|r| r.fa_rate).fold(f64::INFINITY, f64::min);
        let hi = self.rows.iter().map(|r| r.fa_rate).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// No-attack run from the zero initial state.
pub fn record_baseline(
    spec: &SystemSpec,
    derived: &DerivedCovariances,
    n_steps: usize,
    seed: u64,
    watermark_on: bool,
) -> Result<ResidualTrace, CalibrationError> {
    Ok(simulate(spec, derived, &mut NoAttack, n_steps, seed, watermark_on, false)?.trace)
}

/// Survival levels log-spaced from `hi` down to `lo`.
pub fn survival_levels(levels: usize, hi: f64, lo: f64) -> Vec<f64> {
    if levels <= 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..levels).map(|k| (a + (b - a) * k as f64 / (levels - 1) as f64).exp()).collect()
}

fn sorted_copy(stats: &[f64]) -> Vec<f64> {
    let mut s = stats.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Fraction of `sorted` entries `≥ tau`.
fn survival(sorted: &[f64], tau: f64) -> f64 {
    let below = sorted.partition_point(|v| *v < tau);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

fn grid_taus(grid: &TauGrid, sorted: &[f64]) -> Vec<f64> {
    let mut taus: Vec<f64> = match grid {
        TauGrid::Explicit { taus } => taus.clone(),
        TauGrid::Quantiles { levels, max_survival, min_survival } => {
            let n = sorted.len();
            survival_levels(*levels, *max_survival, *min_survival)
                .into_iter()
                .map(|s| {
                    let idx = (((1.0 - s) * n as f64).ceil() as usize).min(n - 1);
                    sorted[idx]
                })
                .collect()
        }
    };
    taus.retain(|t| t.is_finite() && *t > 0.0);
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Largest rate ratio tolerated between neighbouring rows of a replayed
/// table before a midpoint threshold is added.
const REFINE_RATIO: f64 = 1.05;
const REFINE_ROUNDS: usize = 30;

/// The quantile grid of the reset-free statistic can leave wide holes in the
/// replayed rates (a resetting CUSUM alarms far less often than its reset-free
/// statistic exceeds τ). Bisects τ between neighbours whose rates differ by
/// more than [`REFINE_RATIO`], down to `min_survival`.
fn refine_replay_rows(rows: &mut Vec<FaRow>, levels: usize, min_survival: f64, replay: impl Fn(&[f64]) -> Vec<FaRow>) {
    let cap = 4 * levels.max(1);
    for _ in 0..REFINE_ROUNDS {
        let mids: Vec<f64> = rows
            .windows(2)
            .filter(|w| {
                let (hi, lo) = (w[0].fa_rate, w[1].fa_rate);
                hi >= min_survival && hi > REFINE_RATIO * lo && w[1].tau - w[0].tau > 1e-9 * w[1].tau.abs()
            })
            .map(|w| 0.5 * (w[0].tau + w[1].tau))
            .collect();
        if mids.is_empty() || rows.len() >= cap {
            return;
        }
        let room = cap - rows.len();
        rows.extend(replay(&mids[..mids.len().min(room)]));
        rows.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    }
}

/// Builds the false-alarm table of one detector over the post-burn-in part
/// of a no-attack trace.
pub fn empirical_fa_curve(
    trace: &ResidualTrace,
    family: &DetectorFamily,
    spec: &SystemSpec,
    derived: &DerivedCovariances,
    grid: &TauGrid,
    burn_in: usize,
) -> Result<FaTable, CalibrationError> {
    let min = burn_in + 1000;
    if trace.len() <= min {
        return Err(CalibrationError::TraceTooShort { len: trace.len(), burn_in, min: min + 1 });
    }
    if family.needs_watermark() && !trace.watermark_on {
        return Err(CalibrationError::NeedsWatermark);
    }
    let mut raw = Detector::new(family, f64::INFINITY, spec, derived)?;
    let stats = raw.statistics(trace);
    let sorted = sorted_copy(&stats[burn_in..]);
    let steps = sorted.len();
    let mut taus = grid_taus(grid, &sorted);

    let replay = matches!(family, DetectorFamily::Cusum { reset_on_alarm: true, .. });
    if replay && matches!(grid, TauGrid::Quantiles { .. }) {
        // With resets the largest achievable rate sits at τ → 0⁺.
        let floor = sorted.iter().copied().find(|v| *v > 0.0).unwrap_or(1.0) * 1e-6;
        taus.insert(0, floor);
        taus.dedup();
    }
    if taus.is_empty() {
        return Err(CalibrationError::EmptyGrid);
    }

    let replay_rows = |taus: &[f64]| -> Vec<FaRow> {
        taus.par_iter()
            .map(|&tau| {
                let mut det = Detector::new(family, tau, spec, derived).expect("validated above");
                FaRow { tau, fa_rate: det.alarm_rate(trace, burn_in) }
            })
            .collect()
    };
    let mut rows: Vec<FaRow> = if replay {
        let mut rows = replay_rows(&taus);
        if let TauGrid::Quantiles { levels, min_survival, .. } = grid {
            refine_replay_rows(&mut rows, *levels, *min_survival, replay_rows);
        }
        rows
    } else {
        taus.iter().map(|&tau| FaRow { tau, fa_rate: survival(&sorted, tau) }).collect()
    };

    if replay {
        for w in rows.windows(2) {
            let jump = w[1].fa_rate - w[0].fa_rate;
            let se = binomial_se(w[0].fa_rate.max(w[1].fa_rate), steps);
            if jump > 3.0 * se.max(1.0 / steps as f64) {
                return Err(CalibrationError::NonMonotone { tau_lo: w[0].tau, tau_hi: w[1].tau, jump });
            }
        }
        // Within-noise wiggles are flattened so the table stays monotone.
        for k in 1..rows.len() {
            rows[k].fa_rate = rows[k].fa_rate.min(rows[k - 1].fa_rate);
        }
    }

    Ok(FaTable {
        detector: family.clone(),
        rows,
        steps_used: steps,
        seed: trace.seed,
        burn_in,
        trace_fingerprint: trace.fingerprint,
    })
}

/// Linear interpolation of τ against the false-alarm rate. Flat stretches of
/// the curve resolve to their smallest τ.
pub fn threshold_for_fa(table: &FaTable, target: f64) -> Result<f64, CalibrationError> {
    let (lo, hi) = table.fa_range();
    let unachievable = CalibrationError::Unachievable { target, lo, hi };
    if !(target >= lo && target <= hi) || table.rows.is_empty() {
        return Err(unachievable);
    }
    for (k, row) in table.rows.iter().enumerate() {
        if row.fa_rate == target {
            return Ok(row.tau);
        }
        if let Some(next) = table.rows.get(k + 1) {
            if row.fa_rate > target && next.fa_rate < target {
                let t = (target - row.fa_rate) / (next.fa_rate - row.fa_rate);
                return Ok(row.tau + t * (next.tau - row.tau));
            }
        }
    }
    Err(unachievable)
}
