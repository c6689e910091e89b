//! The five subcommands. Each reads the configuration, writes its own files
//! under the output directory and never touches another command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use wmbench_core::calibration::{
    empirical_fa_curve, read_baseline, record_baseline, threshold_for_fa, write_baseline, FaTable,
};
use wmbench_core::detectors::{Detector, DetectorFamily};
use wmbench_core::lti_sim::{derive_covariances, simulate, DerivedCovariances, ResidualTrace};
use wmbench_core::numerics::{serde_rows, sym_sqrt, Matrix, SignalRng, StreamId, SymMatrix};
use wmbench_core::reachability::{attack_capability_curve, CapabilityOptions, CurvePoint, ThetaMode};

use crate::artifacts::{csv_bytes, io_error, num, opt_num, sha256_file, sha256_hex, write_atomic, write_json};
use crate::config::{
    attack_names, detector_slug, load_config, split_seed, validate_config, ExperimentConfig, Seeds,
};
use crate::error::{runtime, CliError};

pub const REPORT_SCHEMA: &str = "wmbench-report/1";
pub const CURVE_HEADER: [&str; 7] = ["fa_rate", "tau", "volume", "volume_stderr", "inner_area", "gap", "omitted_flag"];
pub const RATE_HEADER: [&str; 8] = ["detector", "params", "fa_target", "tau", "attack", "detection_rate", "steps", "note"];

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed_override: Option<u64>,
    /// Detector slugs or family names; `None` selects all.
    pub detectors: Option<Vec<String>>,
}

/// A loaded, validated configuration with overrides applied.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub config_path: PathBuf,
    pub config_sha256: String,
    pub out: PathBuf,
    pub selected: Vec<DetectorFamily>,
    pub derived: DerivedCovariances,
}

impl Experiment {
    pub fn load(opts: &RunOptions) -> Result<Self, CliError> {
        let (mut cfg, text) = load_config(&opts.config)?;
        let issues = validate_config(&cfg);
        if !issues.is_empty() {
            return Err(CliError::Validation(issues));
        }
        if let Some(seed) = opts.seed_override {
            cfg.seeds = Seeds::from_override(seed);
        }
        let selected = select_detectors(&cfg.detectors, opts.detectors.as_deref())?;
        let derived = derive_covariances(&cfg.system).map_err(|e| CliError::Validation(vec![format!("system: {e}")]))?;
        let out = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        Ok(Experiment { cfg, config_path: opts.config.clone(), config_sha256: sha256_hex(text.as_bytes()), out, selected, derived })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Detectors with a baseline to work on; the watermark detector needs
    /// watermarked runs.
    fn active(&self) -> Vec<&DetectorFamily> {
        self.selected.iter().filter(|d| self.cfg.watermark_on || !d.needs_watermark()).collect()
    }

    fn skipped_note(&self) {
        for d in self.selected.iter().filter(|d| d.needs_watermark() && !self.cfg.watermark_on) {
            eprintln!("note: {} skipped, watermark_on is false", d.label());
        }
    }
}

fn select_detectors(all: &[DetectorFamily], wanted: Option<&[String]>) -> Result<Vec<DetectorFamily>, CliError> {
    let Some(wanted) = wanted else {
        return Ok(all.to_vec());
    };
    let mut issues = Vec::new();
    for w in wanted {
        if !all.iter().any(|d| detector_slug(d) == *w || d.name() == w) {
            issues.push(format!("--detectors: {w} matches no configured detector"));
        }
    }
    if !issues.is_empty() {
        return Err(CliError::Validation(issues));
    }
    Ok(all.iter().filter(|d| wanted.iter().any(|w| detector_slug(d) == *w || d.name() == w)).cloned().collect())
}

/// Prints the validation outcome. Parse errors surface from loading.
pub fn cmd_validate(opts: &RunOptions) -> Result<String, CliError> {
    let (cfg, _) = load_config(&opts.config)?;
    let issues = validate_config(&cfg);
    if !issues.is_empty() {
        return Err(CliError::Validation(issues));
    }
    let derived = derive_covariances(&cfg.system).map_err(|e| CliError::Validation(vec![format!("system: {e}")]))?;
    let labels: Vec<String> = cfg.detectors.iter().map(|d| d.label()).collect();
    Ok(format!(
        "ok: p={} q={} m={}, detectors {}, watermark lag k'={}",
        cfg.system.p(),
        cfg.system.q(),
        cfg.system.m(),
        labels.join(", "),
        derived.k_prime
    ))
}

fn baseline_name(watermark: bool, iid: bool) -> String {
    format!("baseline_{}{}.wmbt", if watermark { "wm" } else { "plain" }, if iid { "_iid" } else { "" })
}

fn gaussian_factor(cov: &Matrix) -> Result<Matrix, CliError> {
    let s = SymMatrix::new(cov.clone()).map_err(runtime("covariance"))?;
    Ok(sym_sqrt(&s).map_err(runtime("covariance"))?.into_matrix())
}

/// `r̄ ~ N(0, I)` with watermark draws independent of it.
fn iid_trace(exp: &Experiment, n_steps: usize, seed: u64, watermark: bool) -> Result<ResidualTrace, CliError> {
    let spec = &exp.cfg.system;
    let (q, m) = (spec.q(), spec.m());
    let factor = if watermark { gaussian_factor(&spec.sigma_e)? } else { Matrix::zeros(m, m) };
    let mut rr = SignalRng::new(seed, StreamId::IidResidual);
    let mut wm = SignalRng::new(seed, StreamId::Watermark);
    let mut t = ResidualTrace::new(spec.fingerprint_u64(), watermark, seed, q, m);
    for _ in 0..n_steps {
        t.push(rr.standard_normal_vector(q).as_slice(), wm.gaussian(&factor).as_slice());
    }
    Ok(t)
}

/// Loads the baseline if its header matches, otherwise records and stores it.
fn baseline(exp: &Experiment, watermark: bool) -> Result<ResidualTrace, CliError> {
    let cal = &exp.cfg.calibration;
    let name = baseline_name(watermark, cal.iid_residuals);
    let seed = split_seed(exp.cfg.seeds.baseline, &name);
    let spec = &exp.cfg.system;
    let path = exp.path(&name);
    if let Ok(f) = std::fs::File::open(&path) {
        if let Ok((h, trace)) = read_baseline(std::io::BufReader::new(f)) {
            let same = h.n_steps == cal.n_steps as u64
                && h.seed == seed
                && h.fingerprint == spec.fingerprint_u64()
                && h.watermark_on == watermark
                && (h.p, h.q, h.m) == (spec.p() as u64, spec.q() as u64, spec.m() as u64);
            if same {
                eprintln!("reusing {}", path.display());
                return Ok(trace);
            }
        }
    }
    eprintln!("recording {} ({} steps)", path.display(), cal.n_steps);
    let trace = if cal.iid_residuals {
        iid_trace(exp, cal.n_steps, seed, watermark)?
    } else {
        record_baseline(spec, &exp.derived, cal.n_steps, seed, watermark).map_err(runtime("baseline"))?
    };
    let mut bytes = Vec::with_capacity(trace.len() * (trace.q + trace.m) * 8 + 64);
    write_baseline(&mut bytes, &trace, spec.p()).map_err(|e| io_error(&path, e))?;
    write_atomic(&path, &bytes)?;
    Ok(trace)
}

pub fn fa_table_name(family: &DetectorFamily) -> String {
    format!("fa_{}.json", detector_slug(family))
}

/// One `fa_<detector>.csv` (`tau,fa_rate`) per detector, plus the full table
/// as JSON for the later commands.
pub fn cmd_calibrate(exp: &Experiment) -> Result<Vec<PathBuf>, CliError> {
    exp.skipped_note();
    let active = exp.active();
    let mut traces: BTreeMap<bool, ResidualTrace> = BTreeMap::new();
    for wm in [false, true] {
        if active.iter().any(|d| d.needs_watermark() == wm) {
            traces.insert(wm, baseline(exp, wm)?);
        }
    }
    let cal = &exp.cfg.calibration;
    let mut written = Vec::new();
    for family in active {
        let trace = &traces[&family.needs_watermark()];
        let table = empirical_fa_curve(trace, family, &exp.cfg.system, &exp.derived, &cal.grid, cal.burn_in)
            .map_err(runtime(&family.label()))?;
        let rows: Vec<Vec<String>> = table.rows.iter().map(|r| vec![num(r.tau), num(r.fa_rate)]).collect();
        let csv_path = exp.path(&format!("fa_{}.csv", detector_slug(family)));
        write_atomic(&csv_path, &csv_bytes(&["tau", "fa_rate"], &rows)?)?;
        let json_path = exp.path(&fa_table_name(family));
        write_json(&json_path, &table)?;
        written.push(csv_path);
        written.push(json_path);
    }
    Ok(written)
}

fn load_table(exp: &Experiment, family: &DetectorFamily) -> Result<FaTable, CliError> {
    let path = exp.path(&fa_table_name(family));
    let missing = |hint: &str| CliError::MissingArtifact { path: path.clone(), hint: hint.into() };
    let text = std::fs::read_to_string(&path).map_err(|_| missing("run `wmbench calibrate` first"))?;
    let table: FaTable = serde_json::from_str(&text).map_err(|e| missing(&format!("unreadable table ({e})")))?;
    if table.detector != *family || table.trace_fingerprint != exp.cfg.system.fingerprint_u64() {
        return Err(missing("table belongs to another system or detector; rerun `wmbench calibrate`"));
    }
    Ok(table)
}

/// One row of a reach curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub fa_rate: f64,
    pub tau: Option<f64>,
    pub volume: Option<f64>,
    pub volume_stderr: Option<f64>,
    pub inner_area: Option<f64>,
    pub gap: Option<f64>,
    pub omitted: Option<String>,
}

impl CurveRow {
    fn from_point(p: &CurvePoint) -> Self {
        let r = p.result.as_ref();
        CurveRow {
            fa_rate: p.fa_rate,
            tau: p.tau,
            volume: r.map(|r| r.volume.value),
            volume_stderr: r.map(|r| r.volume.standard_error),
            inner_area: r.and_then(|r| r.inner.map(|i| i.value)),
            gap: r.and_then(|r| r.gap),
            omitted: p.omitted.clone(),
        }
    }

    fn csv_fields(&self) -> Vec<String> {
        vec![
            num(self.fa_rate),
            opt_num(self.tau),
            opt_num(self.volume),
            opt_num(self.volume_stderr),
            opt_num(self.inner_area),
            opt_num(self.gap),
            (self.omitted.is_some() as u8).to_string(),
        ]
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurveFile {
    pub detector: DetectorFamily,
    pub label: String,
    pub rows: Vec<CurveRow>,
    #[serde(default, skip_deserializing, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<CurvePoint>,
}

/// Reachable-set volume against false-alarm rate for each detector.
pub fn cmd_reach(exp: &Experiment) -> Result<Vec<PathBuf>, CliError> {
    exp.skipped_note();
    let spec = &exp.cfg.system;
    let rs = &exp.cfg.reach;
    let mut written = Vec::new();
    for family in exp.active() {
        let table = load_table(exp, family)?;
        let slug = detector_slug(family);
        let opts = CapabilityOptions {
            horizon: rs.n,
            objective: rs.objective,
            theta_mode: ThetaMode::SteadyState,
            volume_samples: rs.volume_samples,
            soundness_samples: rs.soundness_samples,
            inner_steps: rs.inner_steps.filter(|_| spec.p() == 2),
            seed: split_seed(exp.cfg.seeds.mc, &slug),
        };
        eprintln!("reach {} over {} rates", family.label(), rs.fa_grid.len());
        let points = attack_capability_curve(spec, &exp.derived, family, &rs.fa_grid, &table, &opts);
        let rows: Vec<CurveRow> = points.iter().map(CurveRow::from_point).collect();
        for r in rows.iter().filter(|r| r.omitted.is_some()) {
            eprintln!("  fa {} omitted: {}", r.fa_rate, r.omitted.as_deref().unwrap_or_default());
        }
        let csv_path = exp.path(&format!("reach_{slug}.csv"));
        let fields: Vec<Vec<String>> = rows.iter().map(CurveRow::csv_fields).collect();
        write_atomic(&csv_path, &csv_bytes(&CURVE_HEADER, &fields)?)?;
        let json_path = exp.path(&format!("reach_{slug}.json"));
        write_json(&json_path, &CurveFile { detector: family.clone(), label: family.label(), rows, details: points })?;
        written.push(csv_path);
        written.push(json_path);
    }
    Ok(written)
}

/// One detector, false-alarm target and attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub detector: String,
    pub params: String,
    pub fa_target: f64,
    pub tau: Option<f64>,
    pub attack: String,
    pub detection_rate: Option<f64>,
    pub steps: usize,
    pub note: Option<String>,
}

/// Detection rate (alarms over counted steps) of every detector against
/// every attack. The watermark detector sees watermarked runs, the others
/// unwatermarked ones.
pub fn cmd_attack_eval(exp: &Experiment) -> Result<Vec<PathBuf>, CliError> {
    exp.skipped_note();
    let spec = &exp.cfg.system;
    let ev = &exp.cfg.attack_eval;
    let active = exp.active();
    let tables: Vec<FaTable> = active.iter().map(|d| load_table(exp, d)).collect::<Result<_, _>>()?;
    let names = attack_names(&exp.cfg);
    let flags: Vec<bool> = [false, true].into_iter().filter(|wm| active.iter().any(|d| d.needs_watermark() == *wm)).collect();
    let jobs: Vec<(usize, bool)> = (0..names.len()).flat_map(|a| flags.iter().map(move |wm| (a, *wm))).collect();

    let traces: Vec<ResidualTrace> = jobs
        .par_iter()
        .map(|&(a, wm)| {
            let tag = format!("{}/{}", names[a], if wm { "wm" } else { "plain" });
            let seed = split_seed(exp.cfg.seeds.attack, &tag);
            let model = exp.cfg.attacks[a].attack.resolve(&exp.derived).map_err(CliError::Runtime)?;
            let mut attacker = model
                .build(spec, split_seed(seed, "attacker"), ev.activation_step)
                .map_err(runtime(&names[a]))?;
            let out = simulate(spec, &exp.derived, &mut attacker, ev.burn_in + ev.n_steps, seed, wm, false)
                .map_err(runtime(&names[a]))?;
            Ok(out.trace)
        })
        .collect::<Result<_, CliError>>()?;

    let mut rows = Vec::new();
    for (family, table) in active.iter().zip(&tables) {
        for &fa in &ev.fa_targets {
            let tau = threshold_for_fa(table, fa);
            for (a, name) in names.iter().enumerate() {
                let k = jobs.iter().position(|j| *j == (a, family.needs_watermark())).expect("job scheduled");
                let (tau, rate, note) = match &tau {
                    Ok(t) => {
                        let mut det = Detector::new(family, *t, spec, &exp.derived).map_err(runtime(&family.label()))?;
                        (Some(*t), Some(det.alarm_rate(&traces[k], ev.burn_in)), None)
                    }
                    Err(e) => (None, None, Some(e.to_string())),
                };
                rows.push(RateRow {
                    detector: family.name().into(),
                    params: family.label(),
                    fa_target: fa,
                    tau,
                    attack: name.clone(),
                    detection_rate: rate,
                    steps: ev.n_steps,
                    note,
                });
            }
        }
    }
    let fields: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.detector.clone(),
                r.params.clone(),
                num(r.fa_target),
                opt_num(r.tau),
                r.attack.clone(),
                opt_num(r.detection_rate),
                r.steps.to_string(),
                r.note.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let csv_path = exp.path("detection_rates.csv");
    write_atomic(&csv_path, &csv_bytes(&RATE_HEADER, &fields)?)?;
    let json_path = exp.path("detection_rates.json");
    write_json(&json_path, &rows)?;
    Ok(vec![csv_path, json_path])
}

#[derive(Debug, Serialize)]
struct Report {
    schema: &'static str,
    generated_at: u64,
    tool: ToolInfo,
    config: ConfigInfo,
    seeds: Seeds,
    system: SystemInfo,
    calibration: Vec<CalibrationInfo>,
    reach: Vec<CurveFile>,
    detection_rates: Vec<RateRow>,
    artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
}

#[derive(Debug, Serialize)]
struct ConfigInfo {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct SystemInfo {
    fingerprint: String,
    p: usize,
    q: usize,
    m: usize,
    #[serde(with = "serde_rows")]
    sigma_r: Matrix,
    k_prime: usize,
    watermark_on: bool,
}

#[derive(Debug, Serialize)]
struct CalibrationInfo {
    detector: DetectorFamily,
    label: String,
    rows: usize,
    fa_min: f64,
    fa_max: f64,
    steps_used: usize,
    burn_in: usize,
    seed: u64,
}

fn read_artifact<T: serde::de::DeserializeOwned>(path: &Path, hint: &str) -> Result<T, CliError> {
    let missing = |h: String| CliError::MissingArtifact { path: path.to_path_buf(), hint: h };
    let text = std::fs::read_to_string(path).map_err(|_| missing(hint.into()))?;
    serde_json::from_str(&text).map_err(|e| missing(format!("unreadable ({e})")))
}

/// Bundles the outputs of the other commands into `report.json`, with the
/// SHA-256 of every artifact file.
pub fn cmd_report(exp: &Experiment) -> Result<Vec<PathBuf>, CliError> {
    let spec = &exp.cfg.system;
    let active = exp.active();
    let mut calibration = Vec::new();
    let mut reach = Vec::new();
    for family in &active {
        let t = load_table(exp, family)?;
        let (fa_min, fa_max) = t.fa_range();
        calibration.push(CalibrationInfo {
            detector: (*family).clone(),
            label: family.label(),
            rows: t.rows.len(),
            fa_min,
            fa_max,
            steps_used: t.steps_used,
            burn_in: t.burn_in,
            seed: t.seed,
        });
        let path = exp.path(&format!("reach_{}.json", detector_slug(family)));
        reach.push(read_artifact::<CurveFile>(&path, "run `wmbench reach` first")?);
    }
    let detection_rates: Vec<RateRow> =
        read_artifact(&exp.path("detection_rates.json"), "run `wmbench attack-eval` first")?;

    let mut artifacts = BTreeMap::new();
    let entries = std::fs::read_dir(&exp.out).map_err(|e| io_error(&exp.out, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_error(&exp.out, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let kept = [".csv", ".json", ".wmbt"].iter().any(|s| name.ends_with(s)) && name != "report.json";
        if kept && entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
            artifacts.insert(name, sha256_file(&entry.path())?);
        }
    }

    let generated_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let report = Report {
        schema: REPORT_SCHEMA,
        generated_at,
        tool: ToolInfo { name: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") },
        config: ConfigInfo { path: exp.config_path.display().to_string(), sha256: exp.config_sha256.clone() },
        seeds: exp.cfg.seeds,
        system: SystemInfo {
            fingerprint: hex::encode(spec.fingerprint()),
            p: spec.p(),
            q: spec.q(),
            m: spec.m(),
            sigma_r: exp.derived.sigma_r.as_matrix().clone(),
            k_prime: exp.derived.k_prime,
            watermark_on: exp.cfg.watermark_on,
        },
        calibration,
        reach,
        detection_rates,
        artifacts,
    };
    let path = exp.path("report.json");
    write_json(&path, &report)?;
    Ok(vec![path])
}
