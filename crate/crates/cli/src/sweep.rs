//! Sweeps over `pi_0(y*)`: one proxy run and one ground-truth run per
//! value, their hitting times, and theorem bounds where they apply.

use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use rewardlab_core::{
    check_assumptions, fit_scaling_exponent, hitting_time, thm_a1_bounds, thm_a2_neg_bounds,
    thm_a3_pos_bounds, BoundReport, HittingTarget, RewardChoice, ScalingFit, ScalingPoint,
    Scenario, Theorem, CODE_VERSION,
};
use serde::Serialize;

use crate::config::{Algorithm, SweepRun, SweepSpec};
use crate::error::{CliError, Result};
use crate::jobs::{derive_seed, execute_run};
use crate::output::{
    fmt_f64, parse_f64, write_csv, write_json, write_trajectory, NOT_APPLICABLE, NOT_REACHED,
    NOT_RUN,
};

/// Outcome of one run of one swept value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HitOutcome {
    Reached(f64),
    NotReached,
    NotRun,
}

impl HitOutcome {
    pub fn time(self) -> Option<f64> {
        match self {
            HitOutcome::Reached(t) => Some(t),
            _ => None,
        }
    }

    fn field(self) -> String {
        match self {
            HitOutcome::Reached(t) => fmt_f64(t),
            HitOutcome::NotReached => NOT_REACHED.into(),
            HitOutcome::NotRun => NOT_RUN.into(),
        }
    }

    fn parse(field: &str) -> Option<Self> {
        match field {
            NOT_REACHED => Some(HitOutcome::NotReached),
            NOT_RUN => Some(HitOutcome::NotRun),
            _ => parse_f64(field).map(HitOutcome::Reached),
        }
    }
}

/// One row of the sweep CSV, fields in column order.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub label: String,
    pub value: f64,
    pub t_hit_proxy: HitOutcome,
    pub t_hit_truth: HitOutcome,
    pub bound_lower: Option<f64>,
    pub bound_upper: Option<f64>,
    /// `None` when the sweep names no theorem.
    pub assumption_ok: Option<bool>,
    pub seed: u64,
    pub integrator: String,
    pub code_version: String,
    /// Why the row is incomplete; empty when nothing failed.
    pub error: String,
}

pub const RUN_RECORD_COLUMNS: [&str; 11] = [
    "label",
    "value",
    "t_hit_proxy",
    "t_hit_truth",
    "bound_lower",
    "bound_upper",
    "assumption_ok",
    "seed",
    "integrator",
    "code_version",
    "error",
];

fn opt_field(x: Option<f64>) -> String {
    x.map_or_else(|| NOT_APPLICABLE.to_string(), fmt_f64)
}

impl RunRecord {
    pub fn to_fields(&self) -> Vec<String> {
        vec![
            self.label.clone(),
            fmt_f64(self.value),
            self.t_hit_proxy.field(),
            self.t_hit_truth.field(),
            opt_field(self.bound_lower),
            opt_field(self.bound_upper),
            self.assumption_ok
                .map_or_else(|| NOT_APPLICABLE.to_string(), |b| b.to_string()),
            self.seed.to_string(),
            self.integrator.clone(),
            self.code_version.clone(),
            self.error.clone(),
        ]
    }

    pub fn from_fields(fields: &[String]) -> Option<Self> {
        if fields.len() != RUN_RECORD_COLUMNS.len() {
            return None;
        }
        let opt = |s: &str| {
            if s == NOT_APPLICABLE {
                Some(None)
            } else {
                parse_f64(s).map(Some)
            }
        };
        Some(Self {
            label: fields[0].clone(),
            value: parse_f64(&fields[1])?,
            t_hit_proxy: HitOutcome::parse(&fields[2])?,
            t_hit_truth: HitOutcome::parse(&fields[3])?,
            bound_lower: opt(&fields[4])?,
            bound_upper: opt(&fields[5])?,
            assumption_ok: match fields[6].as_str() {
                NOT_APPLICABLE => None,
                s => Some(s.parse().ok()?),
            },
            seed: fields[7].parse().ok()?,
            integrator: fields[8].clone(),
            code_version: fields[9].clone(),
            error: fields[10].clone(),
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    pub run: SweepRun,
    pub fit: Option<ScalingFit>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    pub fit: Option<FitReport>,
}

fn row_label(value: f64) -> String {
    format!("pi0_star={value}")
}

/// Runs every value (in parallel), then writes `<out>/sweep.csv`,
/// `<out>/fit.json` when a fit is requested, and per-run trajectories under
/// `<out>/trajectories/` when asked to.
pub fn run_sweep(spec: &SweepSpec, out: &Path) -> Result<SweepResult> {
    spec.validate()?;
    let records: Vec<RunRecord> = (0..spec.values.len())
        .into_par_iter()
        .map(|i| sweep_value(spec, i, out))
        .collect();
    let rows: Vec<Vec<String>> = records.iter().map(RunRecord::to_fields).collect();
    let header: Vec<String> = RUN_RECORD_COLUMNS.iter().map(|s| s.to_string()).collect();
    write_csv(&out.join("sweep.csv"), &header, &rows)?;
    let fit = spec.fit.map(|run| {
        let points: Vec<ScalingPoint> = records
            .iter()
            .map(|r| ScalingPoint {
                pi0_star: r.value,
                t_hit: match run {
                    SweepRun::Proxy => r.t_hit_proxy.time(),
                    SweepRun::Truth => r.t_hit_truth.time(),
                },
            })
            .collect();
        match fit_scaling_exponent(&points) {
            Ok(f) => FitReport {
                run,
                fit: Some(f),
                error: None,
            },
            Err(e) => FitReport {
                run,
                fit: None,
                error: Some(e.to_string()),
            },
        }
    });
    if let Some(f) = &fit {
        write_json(&out.join("fit.json"), f)?;
    }
    Ok(SweepResult { records, fit })
}

fn sweep_value(spec: &SweepSpec, index: usize, out: &Path) -> RunRecord {
    let value = spec.values[index];
    let label = row_label(value);
    let mut record = RunRecord {
        label: label.clone(),
        value,
        t_hit_proxy: HitOutcome::NotRun,
        t_hit_truth: HitOutcome::NotRun,
        bound_lower: None,
        bound_upper: None,
        assumption_ok: None,
        seed: 0,
        integrator: spec.integrator.descriptor(),
        code_version: CODE_VERSION.to_string(),
        error: String::new(),
    };
    let scenario = match spec.scenario_for(index).build() {
        Ok(s) => s,
        Err(e) => {
            record.error = e.to_string();
            return record;
        }
    };
    record.seed = derive_seed(scenario.seed(), &label);
    let epsilon = spec.epsilon.get(index);
    let mut errors = Vec::new();

    if let Some(theorem) = spec.bounds {
        match bounds_for(&scenario, theorem, epsilon) {
            Ok((ok, report)) => {
                record.assumption_ok = Some(ok);
                if let Some(b) = report {
                    record.bound_lower = b.lower_bound_t_star;
                    record.bound_upper = b.upper_bound_t_nomed.or(b.upper_bound_t_star);
                }
            }
            Err(e) => errors.push(format!("bounds: {e}")),
        }
    }

    for &run in &spec.runs {
        match hit_for(spec, &scenario, run, epsilon, record.seed, &label, out) {
            Ok(hit) => match run {
                SweepRun::Proxy => record.t_hit_proxy = hit,
                SweepRun::Truth => record.t_hit_truth = hit,
            },
            Err(e) => {
                warn!("{label} {run:?}: {e}");
                errors.push(format!("{run:?} run: {e}").to_lowercase());
            }
        }
    }
    record.error = errors.join("; ");
    record
}

/// Whether the hypotheses hold, and the bounds when they do.
fn bounds_for(
    scenario: &Scenario,
    theorem: Theorem,
    epsilon: f64,
) -> Result<(bool, Option<BoundReport>)> {
    let report = check_assumptions(scenario, theorem)?;
    if !report.overall {
        return Ok((false, None));
    }
    let bounds = match theorem {
        Theorem::ThmA1 => thm_a1_bounds(scenario, epsilon)?,
        Theorem::ThmA2Neg => thm_a2_neg_bounds(scenario, epsilon)?,
        Theorem::ThmA3Pos => thm_a3_pos_bounds(scenario, epsilon)?,
        Theorem::PropNegFail => {
            return Err(CliError::Invalid("prop_neg_fail has no time bounds".into()))
        }
    };
    Ok((true, Some(bounds)))
}

fn hit_for(
    spec: &SweepSpec,
    scenario: &Scenario,
    run: SweepRun,
    epsilon: f64,
    row_seed: u64,
    label: &str,
    out: &Path,
) -> Result<HitOutcome> {
    let objective = match run {
        SweepRun::Proxy => RewardChoice::Proxy,
        SweepRun::Truth => RewardChoice::GroundTruth,
    };
    let target = HittingTarget::ground_truth(scenario);
    let mut integrator = spec.integrator.clone();
    if integrator.stop_at_truth_value.is_none() && !spec.write_trajectories {
        // nothing past the crossing is reported
        integrator.stop_at_truth_value = Some(target.r_star - epsilon);
    }
    let replicates = match spec.algorithm {
        Algorithm::GradientFlow => 1,
        Algorithm::Reinforce => spec.replicates,
    };
    let mut times = Vec::with_capacity(replicates as usize);
    for rep in 0..replicates {
        let key = format!("{label}/{run:?}/{rep}");
        let seed = derive_seed(row_seed, &key);
        let traj = execute_run(scenario, objective, spec.algorithm, &integrator, seed)?;
        if spec.write_trajectories {
            let name = format!("{label}_{run:?}_{rep}.csv").to_lowercase();
            write_trajectory(&out.join("trajectories").join(name), &traj)?;
        }
        match hitting_time(&traj, epsilon, target)?.t_hit {
            Some(t) => times.push(t),
            None => {
                info!(
                    "{key}: not reached by t = {}",
                    traj.times.last().copied().unwrap_or(0.0)
                );
                times.push(f64::INFINITY);
            }
        }
    }
    let m = median(&mut times);
    Ok(if m.is_finite() {
        HitOutcome::Reached(m)
    } else {
        HitOutcome::NotReached
    })
}

/// Median; sampled hitting times are heavy-tailed, so the mean of a few
/// replicates is dominated by single runs. Unreached replicates count as
/// infinite.
fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Reads a file written by [`run_sweep`].
pub fn read_sweep_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let header = r.headers().map_err(|e| CliError::csv(path, e))?.clone();
    if header.iter().ne(RUN_RECORD_COLUMNS.iter().copied()) {
        return Err(CliError::parse(path, "unexpected sweep header"));
    }
    r.records()
        .enumerate()
        .map(|(line, rec)| {
            let rec = rec.map_err(|e| CliError::csv(path, e))?;
            let fields: Vec<String> = rec.iter().map(String::from).collect();
            RunRecord::from_fields(&fields)
                .ok_or_else(|| CliError::parse(path, format!("row {line} is malformed")))
        })
        .collect()
}
