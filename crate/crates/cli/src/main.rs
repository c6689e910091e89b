use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wmbench::{cmd_attack_eval, cmd_calibrate, cmd_reach, cmd_report, cmd_validate, CliError, Experiment, RunOptions};

/// Attack-capability benchmark for residual detectors.
#[derive(Parser)]
#[command(name = "wmbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration and the system description.
    Validate(Common),
    /// Record baselines and tabulate false-alarm rate against threshold.
    Calibrate(Common),
    /// Reachable-set volume for each false-alarm rate of the grid.
    Reach(Common),
    /// Detection rates under the configured attacks.
    AttackEval(Common),
    /// Summarize every artifact in report.json.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Derive all seeds from this one value.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Comma-separated detector slugs (e.g. `cusum_gamma3`) or family names.
    #[arg(long, value_delimiter = ',')]
    detectors: Option<Vec<String>>,
}

impl From<Common> for RunOptions {
    fn from(c: Common) -> Self {
        RunOptions { config: c.config, out: c.out, seed_override: c.seed_override, detectors: c.detectors }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("WMBENCH_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Runtime(format!("WMBENCH_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let written = match cli.command {
        Command::Validate(c) => {
            println!("{}", cmd_validate(&c.into())?);
            return Ok(());
        }
        Command::Calibrate(c) => cmd_calibrate(&Experiment::load(&c.into())?)?,
        Command::Reach(c) => cmd_reach(&Experiment::load(&c.into())?)?,
        Command::AttackEval(c) => cmd_attack_eval(&Experiment::load(&c.into())?)?,
        Command::Report(c) => cmd_report(&Experiment::load(&c.into())?)?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
