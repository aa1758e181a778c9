use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rewardlab_cli::{
    output, parse_config, run_check, run_metrics, run_simulate, run_sweep, Config,
};

/// Policy-gradient dynamics under misspecified rewards.
#[derive(Parser)]
#[command(name = "rewardlab", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimizations of a simulate config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a sweep over pi0_star.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ranking metrics of a preference dataset.
    Metrics {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        values: Option<PathBuf>,
        /// JSON report; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Theorem hypotheses and bounds for a scenario.
    Check {
        #[arg(long)]
        config: PathBuf,
        /// JSON report; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit<T: serde::Serialize>(value: &T, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => output::write_json(path, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Ok(n) = std::env::var("REWARDLAB_THREADS") {
        let n: usize = n
            .parse()
            .context("REWARDLAB_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }

    match cli.command {
        Command::Simulate { config, out, seed } => match parse_config(&config)? {
            Config::Simulate(job) => {
                let summary = run_simulate(&job, &out, seed)?;
                log::info!("wrote {} runs to {}", summary.runs.len(), out.display());
            }
            other => anyhow::bail!(
                "{} holds a {} job, not simulate",
                config.display(),
                other.kind()
            ),
        },
        Command::Sweep { config, out } => match parse_config(&config)? {
            Config::Sweep(spec) => {
                let result = run_sweep(&spec, &out)?;
                let failed = result
                    .records
                    .iter()
                    .filter(|r| !r.error.is_empty())
                    .count();
                if failed > 0 {
                    log::warn!("{failed} of {} rows recorded errors", result.records.len());
                }
            }
            other => anyhow::bail!(
                "{} holds a {} job, not sweep",
                config.display(),
                other.kind()
            ),
        },
        Command::Metrics {
            dataset,
            values,
            out,
        } => {
            let report = run_metrics(&dataset, values.as_deref())?;
            emit(&report, out.as_ref())?;
        }
        Command::Check { config, out } => match parse_config(&config)? {
            Config::Check(job) => emit(&run_check(&job)?, out.as_ref())?,
            other => anyhow::bail!(
                "{} holds a {} job, not check",
                config.display(),
                other.kind()
            ),
        },
    }
    Ok(())
}
