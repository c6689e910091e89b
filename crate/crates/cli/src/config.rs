//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use wmbench_core::attacks::AttackModel;
use wmbench_core::calibration::{CalibrationConfig, TauGrid, DEFAULT_BURN_IN, DEFAULT_CALIBRATION_STEPS};
use wmbench_core::detectors::DetectorFamily;
use wmbench_core::lti_sim::{validate_spec, DerivedCovariances, SystemSpec};
use wmbench_core::numerics::{serde_rows, Matrix};
use wmbench_core::reachability::{EllipsoidObjective, DEFAULT_HORIZON};

use crate::error::CliError;

const SYSTEM_FIELDS: [&str; 8] = ["A", "B", "C", "K", "L", "Sigma_w", "Sigma_z", "Sigma_e"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub detectors: Vec<DetectorFamily>,
    /// Record watermarked baselines and evaluate the watermark detector.
    #[serde(default)]
    pub watermark_on: bool,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub reach: ReachSettings,
    #[serde(default)]
    pub attack_eval: AttackEvalSettings,
    #[serde(default)]
    pub attacks: Vec<AttackEntry>,
    pub seeds: Seeds,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("wmbench-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSettings {
    #[serde(default = "default_cal_steps")]
    pub n_steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub grid: TauGrid,
    /// Diagnostic mode: calibrate on iid `N(0, I)` residuals instead of the
    /// simulated loop.
    #[serde(default)]
    pub iid_residuals: bool,
}

fn default_cal_steps() -> usize {
    DEFAULT_CALIBRATION_STEPS
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            n_steps: DEFAULT_CALIBRATION_STEPS,
            burn_in: DEFAULT_BURN_IN,
            grid: TauGrid::default(),
            iid_residuals: false,
        }
    }
}

impl CalibrationSettings {
    pub fn to_core(&self) -> CalibrationConfig {
        CalibrationConfig { n_steps: self.n_steps, burn_in: self.burn_in, grid: self.grid.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachSettings {
    #[serde(default = "default_horizon")]
    pub n: usize,
    #[serde(default = "default_fa_grid")]
    pub fa_grid: Vec<f64>,
    #[serde(default)]
    pub objective: EllipsoidObjective,
    /// Steps of the inner hull estimate; omitted or null skips it.
    #[serde(default)]
    pub inner_steps: Option<usize>,
    #[serde(default = "default_volume_samples")]
    pub volume_samples: u64,
    #[serde(default = "default_soundness_samples")]
    pub soundness_samples: usize,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

/// Ten rates evenly spaced over `[0.01, 0.3]`.
pub fn default_fa_grid() -> Vec<f64> {
    (0..10).map(|k| 0.01 + 0.29 * k as f64 / 9.0).collect()
}

fn default_volume_samples() -> u64 {
    1_000_000
}

fn default_soundness_samples() -> usize {
    10_000
}

impl Default for ReachSettings {
    fn default() -> Self {
        ReachSettings {
            n: DEFAULT_HORIZON,
            fa_grid: default_fa_grid(),
            objective: EllipsoidObjective::default(),
            inner_steps: None,
            volume_samples: default_volume_samples(),
            soundness_samples: default_soundness_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEvalSettings {
    #[serde(default = "default_fa_targets")]
    pub fa_targets: Vec<f64>,
    /// Attacked steps counted after the burn-in.
    #[serde(default = "default_attack_steps")]
    pub n_steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// First step at which the attack acts.
    #[serde(default)]
    pub activation_step: u64,
}

fn default_fa_targets() -> Vec<f64> {
    vec![0.05]
}

fn default_attack_steps() -> usize {
    100_000
}

impl Default for AttackEvalSettings {
    fn default() -> Self {
        AttackEvalSettings {
            fa_targets: default_fa_targets(),
            n_steps: default_attack_steps(),
            burn_in: DEFAULT_BURN_IN,
            activation_step: 0,
        }
    }
}

/// Attack as written in the config; Gaussian noise may be given as a
/// multiple of the residual covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum AttackConfig {
    None,
    GaussianNoise {
        #[serde(rename = "Sigma_v", default, with = "serde_rows::option", skip_serializing_if = "Option::is_none")]
        sigma_v: Option<Matrix>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_r_scale: Option<f64>,
    },
    FalseState {
        #[serde(rename = "Sigma_omega", default, with = "serde_rows::option", skip_serializing_if = "Option::is_none")]
        sigma_omega: Option<Matrix>,
        #[serde(rename = "Sigma_zeta", default, with = "serde_rows::option", skip_serializing_if = "Option::is_none")]
        sigma_zeta: Option<Matrix>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        xi0: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub attack: AttackConfig,
}

impl AttackConfig {
    pub fn default_name(&self) -> &'static str {
        match self {
            AttackConfig::None => "none",
            AttackConfig::GaussianNoise { .. } => "gaussian_noise",
            AttackConfig::FalseState { .. } => "false_state",
        }
    }

    pub fn resolve(&self, derived: &DerivedCovariances) -> Result<AttackModel, String> {
        Ok(match self {
            AttackConfig::None => AttackModel::None,
            AttackConfig::GaussianNoise { sigma_v, sigma_r_scale } => match (sigma_v, sigma_r_scale) {
                (Some(s), None) => AttackModel::GaussianNoise { sigma_v: s.clone() },
                (None, Some(k)) => AttackModel::GaussianNoise { sigma_v: derived.sigma_r.as_matrix() * *k },
                _ => return Err("GaussianNoise needs exactly one of Sigma_v and sigma_r_scale".into()),
            },
            AttackConfig::FalseState { sigma_omega, sigma_zeta, xi0 } => AttackModel::FalseState {
                sigma_omega: sigma_omega.clone(),
                sigma_zeta: sigma_zeta.clone(),
                xi0: xi0.clone(),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub baseline: u64,
    pub attack: u64,
    pub mc: u64,
}

/// A named sub-stream of `base`, so that adding an experiment never shifts
/// the seeds of the others.
pub fn split_seed(base: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl Seeds {
    pub fn from_override(seed: u64) -> Self {
        Seeds {
            baseline: split_seed(seed, "baseline"),
            attack: split_seed(seed, "attack"),
            mc: split_seed(seed, "mc"),
        }
    }
}

/// File-name friendly detector label, e.g. `cusum_gamma3`.
pub fn detector_slug(family: &DetectorFamily) -> String {
    family.label().replace('(', "_").replace([')', '='], "")
}

/// Parses a config document, reporting syntax and type errors with their
/// position.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
    if let Some(sys) = value.get("system").and_then(|s| s.as_object()) {
        let missing: Vec<String> = SYSTEM_FIELDS
            .iter()
            .filter(|k| sys.get(**k).is_none_or(|v| v.is_null()))
            .map(|k| format!("system.{k} is missing or null and must be supplied"))
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Validation(missing));
        }
    }
    serde_json::from_str(text).map_err(parse_error)
}

fn parse_error(e: serde_json::Error) -> CliError {
    CliError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok((parse_config(&text)?, text))
}

/// Semantic checks that the type system cannot express.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<String> {
    let mut issues: Vec<String> = validate_spec(&cfg.system).issues.into_iter().map(|s| format!("system: {s}")).collect();
    let (q, m) = (cfg.system.c.nrows(), cfg.system.b.ncols());
    if cfg.detectors.is_empty() {
        issues.push("detectors: at least one detector is required".into());
    }
    for (i, d) in cfg.detectors.iter().enumerate() {
        if let Err(e) = d.validate(q, m) {
            issues.push(format!("detectors[{i}] ({}): {e}", d.label()));
        }
        if cfg.detectors[..i].iter().any(|o| detector_slug(o) == detector_slug(d)) {
            issues.push(format!("detectors[{i}]: duplicate detector {}", d.label()));
        }
    }
    let cal = &cfg.calibration;
    if cal.n_steps <= cal.burn_in + 1000 {
        issues.push(format!("calibration.n_steps must exceed burn_in + 1000 = {}", cal.burn_in + 1000));
    }
    let rate_ok = |v: &f64| *v > 0.0 && *v < 1.0;
    if cfg.reach.fa_grid.is_empty() || !cfg.reach.fa_grid.iter().all(rate_ok) {
        issues.push("reach.fa_grid must be a nonempty list of rates in (0, 1)".into());
    }
    if cfg.reach.n == 0 {
        issues.push("reach.n must be positive".into());
    }
    if cfg.attack_eval.fa_targets.is_empty() || !cfg.attack_eval.fa_targets.iter().all(rate_ok) {
        issues.push("attack_eval.fa_targets must be a nonempty list of rates in (0, 1)".into());
    }
    if cfg.attack_eval.n_steps == 0 {
        issues.push("attack_eval.n_steps must be positive".into());
    }
    for (i, a) in cfg.attacks.iter().enumerate() {
        let check = |name: &str, mat: &Option<Matrix>, dim: usize, issues: &mut Vec<String>| {
            if let Some(x) = mat {
                if x.nrows() != dim || x.ncols() != dim {
                    issues.push(format!("attacks[{i}].{name} has shape {}x{}, expected {dim}x{dim}", x.nrows(), x.ncols()));
                }
            }
        };
        match &a.attack {
            AttackConfig::None => {}
            AttackConfig::GaussianNoise { sigma_v, sigma_r_scale } => {
                check("Sigma_v", sigma_v, q, &mut issues);
                if sigma_v.is_some() == sigma_r_scale.is_some() {
                    issues.push(format!("attacks[{i}]: give exactly one of Sigma_v and sigma_r_scale"));
                }
                if sigma_r_scale.is_some_and(|k| !(k >= 0.0)) {
                    issues.push(format!("attacks[{i}].sigma_r_scale must be nonnegative"));
                }
            }
            AttackConfig::FalseState { sigma_omega, sigma_zeta, xi0 } => {
                check("Sigma_omega", sigma_omega, cfg.system.a.nrows(), &mut issues);
                check("Sigma_zeta", sigma_zeta, q, &mut issues);
                if let Some(x) = xi0 {
                    if x.len() != cfg.system.a.nrows() {
                        issues.push(format!("attacks[{i}].xi0 has length {}, expected {}", x.len(), cfg.system.a.nrows()));
                    }
                }
            }
        }
    }
    let names = attack_names(cfg);
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            issues.push(format!("attacks[{i}]: duplicate attack name {n}"));
        }
    }
    issues
}

/// Display names of the configured attacks.
pub fn attack_names(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.attacks.iter().map(|a| a.name.clone().unwrap_or_else(|| a.attack.default_name().to_string())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = include_str!("../fixtures/murguia2d.json");

    #[test]
    fn fixture_parses_and_validates() {
        let cfg = parse_config(FIXTURE).unwrap();
        assert!(validate_config(&cfg).is_empty(), "{:?}", validate_config(&cfg));
        assert_eq!(cfg.detectors.len(), 4);
        assert_eq!(attack_names(&cfg), ["none", "gaussian_noise", "false_state"]);
    }

    #[test]
    fn empty_document_is_a_parse_error() {
        assert!(matches!(parse_config(""), Err(CliError::Parse { .. })));
        assert!(matches!(parse_config("{\n  \"system\": [1,"), Err(CliError::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_seed_is_reported() {
        let mut v: serde_json::Value = serde_json::from_str(FIXTURE).unwrap();
        v["seeds"].as_object_mut().unwrap().remove("mc");
        match parse_config(&v.to_string()) {
            Err(CliError::Parse { message, .. }) => assert!(message.contains("mc"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn output_dimension_mismatch_names_the_matrix() {
        let mut v: serde_json::Value = serde_json::from_str(FIXTURE).unwrap();
        v["system"]["C"] = serde_json::json!([[1.0, 0.0], [2.0, 1.0], [0.0, 1.0]]);
        let cfg = parse_config(&v.to_string()).unwrap();
        let issues = validate_config(&cfg);
        assert!(issues.iter().any(|s| s.contains("Sigma_z") || s.contains("L has shape")), "{issues:?}");
    }

    #[test]
    fn null_gains_are_flagged() {
        let text = include_str!("../fixtures/segway_lti.json");
        match parse_config(text) {
            Err(CliError::Validation(issues)) => {
                assert!(issues.iter().any(|s| s.contains("system.K")));
                assert!(issues.iter().any(|s| s.contains("system.L")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seed_split_is_stable_and_distinct() {
        assert_eq!(split_seed(7, "attack"), split_seed(7, "attack"));
        assert_ne!(split_seed(7, "attack"), split_seed(7, "mc"));
        let s = Seeds::from_override(7);
        assert_ne!(s.baseline, s.attack);
    }

    #[test]
    fn slugs() {
        assert_eq!(detector_slug(&DetectorFamily::Chi2), "chi2");
        assert_eq!(detector_slug(&DetectorFamily::Cusum { gamma: 2.2, reset_on_alarm: true }), "cusum_gamma2.2");
        assert_eq!(detector_slug(&DetectorFamily::DynWat { ell: 20, pairing_delay: 1 }), "dynwat_ell20");
    }
}
