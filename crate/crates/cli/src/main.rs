use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lbpfc_core::harness::{self, compare, ExperimentConfig, SweepConfig};

#[derive(Parser)]
#[command(name = "lbpfc", version, about = "Quadrotor path following under wind: simulation and table sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its metrics as JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the measurement-noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the CSV log and metrics file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand a sweep file, run every scenario in parallel and print the table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario twice, check invariants and bitwise replay.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid-search the carrot and NLGL look-ahead distances on the calm circle.
    Tune {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
        candidates: Vec<f64>,
    },
}

fn load(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = load(&config, seed, out)?;
            let (log, report) = harness::run_and_report(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            let violations = harness::check_invariants(&cfg, &log);
            for v in &violations {
                log::warn!("{}: {} ({})", v.run, v.check, v.detail);
            }
            Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Sweep { config, out } => {
            let mut sweep = SweepConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if out.is_some() {
                sweep.base.output_dir = out.clone();
            }
            let configs = sweep.expand()?;
            log::info!("{} scenarios", configs.len());
            let reports = harness::sweep(&configs)?;
            let rows = compare(&reports);
            let failed = reports
                .iter()
                .filter(|r| r.error.is_some() || r.control_violations > 0 || r.theta_vel_violations > 0)
                .count();
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("reports.json"), serde_json::to_string_pretty(&reports)?)?;
                std::fs::write(dir.join("table.json"), serde_json::to_string_pretty(&rows)?)?;
            }
            for row in &rows {
                let cells: Vec<String> = row.rmse.iter().map(|(c, v)| format!("{c}={v:.4}")).collect();
                println!("{} + {}\t{}", row.high_level.label(), row.low_level.label(), cells.join("\t"));
            }
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Validate { config, seed } => {
            let cfg = load(&config, seed, None)?;
            let violations = harness::validate_scenario(&cfg)?;
            for v in &violations {
                println!("FAIL {}: {} ({})", v.run, v.check, v.detail);
            }
            if violations.is_empty() {
                println!("OK {}", cfg.name);
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::Tune { config, candidates } => {
            let base = match config {
                Some(p) => load(&p, None, None)?,
                None => ExperimentConfig::default(),
            };
            let (d1, d2) = harness::tune_guidance(&base, &candidates)?;
            println!("d1 = {d1}\nd2 = {d2}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
