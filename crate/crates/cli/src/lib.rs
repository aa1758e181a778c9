//! Config-driven experiments on top of `rewardlab-core`: single runs,
//! sweeps over `pi_0(y*)`, theorem checks and ranking metrics, with CSV and
//! JSON export for external plotting.

pub mod config;
pub mod error;
pub mod jobs;
pub mod output;
pub mod sweep;

use std::path::Path;

pub use config::{parse_config, Config, ScenarioSpec, SweepSpec, SCHEMA_VERSION};
pub use error::{CliError, Result};
pub use jobs::{derive_seed, run_check, run_metrics, run_simulate, stable_hash};
pub use sweep::{read_sweep_csv, run_sweep, HitOutcome, RunRecord, RUN_RECORD_COLUMNS};

/// Runs whatever job the config describes, writing into `out`.
///
/// Check reports go to `<out>/check.json` and metrics reports to
/// `<out>/metrics.json`; metric paths are resolved against the config's
/// directory.
pub fn run_config(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    match parse_config(config_path)? {
        Config::Simulate(job) => {
            run_simulate(&job, out, seed)?;
        }
        Config::Sweep(mut spec) => {
            if let Some(s) = seed {
                spec.scenario.seed = Some(s);
            }
            run_sweep(&spec, out)?;
        }
        Config::Check(job) => {
            let report = run_check(&job)?;
            output::write_json(&out.join("check.json"), &report)?;
        }
        Config::Metrics(job) => {
            let dataset = jobs::relative_to(config_path, &job.dataset);
            let values = job
                .values
                .as_ref()
                .map(|v| jobs::relative_to(config_path, v));
            let report = run_metrics(&dataset, values.as_deref())?;
            output::write_json(&out.join("metrics.json"), &report)?;
        }
    }
    Ok(())
}
