//! Batch front-end for `wmbench-core`: reads an experiment file, calibrates
//! detector thresholds, computes reachable-set curves and detection rates,
//! and writes CSV/JSON artifacts.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_attack_eval, cmd_calibrate, cmd_reach, cmd_report, cmd_validate, Experiment, RunOptions};
pub use config::{parse_config, ExperimentConfig};
pub use error::CliError;
