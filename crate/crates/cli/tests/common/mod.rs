#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture_path(name)).unwrap()).unwrap()
}

/// The example system with cheap settings, writing into `out`.
pub fn small_config(out: &Path) -> Value {
    let mut v = fixture("murguia2d.json");
    v["calibration"] = serde_json::json!({"n_steps": 40_000, "burn_in": 1000});
    v["reach"] = serde_json::json!({"n": 12, "fa_grid": [0.05], "volume_samples": 20_000, "soundness_samples": 1000});
    v["attack_eval"] = serde_json::json!({"fa_targets": [0.05], "n_steps": 20_000, "burn_in": 1000});
    v["output_dir"] = Value::String(out.display().to_string());
    v
}

pub fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

pub fn wmbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmbench")).args(args).output().expect("binary runs")
}

/// Runs a subcommand and insists on success.
pub fn run_ok(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = wmbench(&args);
    assert!(out.status.success(), "{cmd} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `(header, rows)` of a CSV file.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

/// Every `.csv` file of a directory with its bytes, sorted by name.
pub fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}
