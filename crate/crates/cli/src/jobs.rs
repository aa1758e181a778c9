//! Single-scenario jobs: simulate, check and metrics.

use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use log::info;
use rewardlab_core::{
    acc, check_assumptions, hacc, hitting_time, prop2_tv_threshold, prop_neg_fail_check, run_flow,
    run_reinforce, thm_a1_bounds, thm_a2_neg_bounds, thm_a3_pos_bounds, tv_divergence_pair,
    weighted_variant, AssumptionReport, BoundReport, HittingTarget, IntegratorConfig,
    NegFailReport, RewardChoice, RewardTable, Scenario, ScenarioParts, Theorem, Trajectory,
    CODE_VERSION, RNG_NAME,
};
use serde::Serialize;

use crate::config::{Algorithm, CheckJob, RunSpec, SimulateJob};
use crate::error::Result;
use crate::output::{read_dataset, read_values, write_json, write_trajectory, write_tv};

/// 64-bit FNV-1a of a run key; stable across platforms and releases.
pub fn stable_hash(key: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(key.as_bytes());
    h.finish()
}

/// Seed of the run named `key` under a base seed.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    base ^ stable_hash(key)
}

/// Copy of the scenario whose proxy equals its ground truth, used when a
/// sampled run has to maximize the ground truth.
pub fn aligned_to_truth(scenario: &Scenario) -> Result<Scenario> {
    let mut parts: ScenarioParts = scenario.parts().clone();
    parts.rewards = RewardTable::aligned(scenario.rewards().ground_truth().to_vec())?;
    parts.label = rewardlab_core::ErrorCategory::Custom;
    if parts.structure_over == RewardChoice::Proxy {
        parts.structure =
            rewardlab_core::StructuredRewardSpec::infer(parts.rewards.ground_truth())?;
        parts.structure_over = RewardChoice::GroundTruth;
    }
    Ok(Scenario::from_parts(parts)?)
}

/// Runs one optimization of `objective` on the scenario.
pub fn execute_run(
    scenario: &Scenario,
    objective: RewardChoice,
    algorithm: Algorithm,
    integrator: &IntegratorConfig,
    seed: u64,
) -> Result<Trajectory> {
    Ok(match (algorithm, objective) {
        (Algorithm::GradientFlow, _) => run_flow(scenario, objective, integrator)?,
        (Algorithm::Reinforce, RewardChoice::Proxy) => run_reinforce(scenario, integrator, seed)?,
        (Algorithm::Reinforce, RewardChoice::GroundTruth) => {
            run_reinforce(&aligned_to_truth(scenario)?, integrator, seed)?
        }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub objective: RewardChoice,
    pub algorithm: Algorithm,
    pub integrator: String,
    pub seed: u64,
    pub file: String,
    pub recorded_rows: usize,
    pub last_step: u64,
    pub final_time: f64,
    /// `None` when the run ended before the threshold.
    pub t_hit: Option<f64>,
    pub reached: Option<bool>,
    pub max_prob: Vec<f64>,
    pub max_v_truth: f64,
    /// Time with `pi(y_med) > 0.9`.
    pub time_med_above_0_9: f64,
    pub monotonicity_violations: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateSummary {
    pub code_version: &'static str,
    pub rng: &'static str,
    pub label: String,
    pub scenario_seed: u64,
    pub epsilon: Option<f64>,
    pub runs: Vec<RunSummary>,
    pub tv_max: Option<f64>,
}

/// Writes `<out>/<run>.csv` for every run, `<out>/tv.csv` when requested
/// and `<out>/summary.json`.
pub fn run_simulate(
    job: &SimulateJob,
    out: &Path,
    seed_override: Option<u64>,
) -> Result<SimulateSummary> {
    let mut scenario = job.scenario.build()?;
    if let Some(seed) = seed_override {
        scenario = scenario.with_seed(seed);
    }
    let target = HittingTarget::ground_truth(&scenario);
    let med = scenario.structure().med_index;
    let mut runs = Vec::with_capacity(job.runs.len());
    for run in &job.runs {
        runs.push(simulate_one(&scenario, run, job.epsilon, target, med, out)?);
    }
    let tv_max = match &job.tv {
        Some(tv) => {
            let series = tv_divergence_pair(&scenario, &tv.integrator, tv.horizon)?;
            write_tv(&out.join("tv.csv"), &series.times, &series.tv)?;
            Some(series.max())
        }
        None => None,
    };
    let summary = SimulateSummary {
        code_version: CODE_VERSION,
        rng: RNG_NAME,
        label: scenario.label().to_string(),
        scenario_seed: scenario.seed(),
        epsilon: job.epsilon,
        runs,
        tv_max,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn simulate_one(
    scenario: &Scenario,
    run: &RunSpec,
    epsilon: Option<f64>,
    target: HittingTarget,
    med: usize,
    out: &Path,
) -> Result<RunSummary> {
    let seed = run
        .seed
        .unwrap_or_else(|| derive_seed(scenario.seed(), &run.name));
    info!(
        "run {} ({:?}, {})",
        run.name,
        run.objective,
        run.integrator.descriptor()
    );
    let traj = execute_run(
        scenario,
        run.objective,
        run.algorithm,
        &run.integrator,
        seed,
    )?;
    let file = format!("{}.csv", run.name);
    write_trajectory(&out.join(&file), &traj)?;
    let hit = epsilon
        .map(|e| hitting_time(&traj, e, target))
        .transpose()?;
    let n = scenario.features().len();
    Ok(RunSummary {
        name: run.name.clone(),
        objective: run.objective,
        algorithm: run.algorithm,
        integrator: run.integrator.descriptor(),
        seed,
        file,
        recorded_rows: traj.len(),
        last_step: traj.steps.last().copied().unwrap_or(0),
        final_time: traj.times.last().copied().unwrap_or(0.0),
        t_hit: hit.and_then(|h| h.t_hit),
        reached: hit.map(|h| h.reached()),
        max_prob: (0..n).map(|i| traj.max_prob(i)).collect(),
        max_v_truth: traj.max_v_truth(),
        time_med_above_0_9: traj.time_with_prob_above(med, 0.9),
        monotonicity_violations: traj.monotonicity_violations,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoremCheck {
    pub theorem: Theorem,
    /// Absent when the geometry rules the theorem out before any inequality
    /// is evaluated; `refusal` then says why.
    pub assumptions: Option<AssumptionReport>,
    pub bounds: Option<BoundReport>,
    pub neg_fail: Option<NegFailReport>,
    pub refusal: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop2Check {
    pub epsilon: f64,
    pub horizon: f64,
    pub b: f64,
    pub delta_z: f64,
    /// `None` when the rewards agree everywhere (no constraint).
    pub threshold: Option<f64>,
    pub initial_mass_z: f64,
    pub within_threshold: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub code_version: &'static str,
    pub label: String,
    pub epsilon: f64,
    pub theorems: Vec<TheoremCheck>,
    pub prop2: Option<Prop2Check>,
}

pub fn run_check(job: &CheckJob) -> Result<CheckReport> {
    let scenario = job.scenario.build()?;
    let theorems = job
        .theorems
        .iter()
        .map(|&t| check_theorem(&scenario, t, job.epsilon))
        .collect();
    let prop2 = match job.tv_budget.or(scenario.tv_budget()) {
        Some(budget) => {
            let z = scenario.disagreement_set();
            let b = scenario.features().max_norm();
            let delta_z = scenario.rewards().max_gap(&z);
            let threshold = prop2_tv_threshold(b, delta_z, budget.epsilon, budget.horizon)?;
            let mass = scenario.initial_mass(&z);
            Some(Prop2Check {
                epsilon: budget.epsilon,
                horizon: budget.horizon,
                b,
                delta_z,
                threshold: threshold.is_finite().then_some(threshold),
                initial_mass_z: mass,
                // same relative guard as the scenario builder's own check
                within_threshold: mass <= threshold * (1.0 + 1e-12),
            })
        }
        None => None,
    };
    Ok(CheckReport {
        code_version: CODE_VERSION,
        label: scenario.label().to_string(),
        epsilon: job.epsilon,
        theorems,
        prop2,
    })
}

fn check_theorem(scenario: &Scenario, theorem: Theorem, epsilon: f64) -> TheoremCheck {
    let mut out = TheoremCheck {
        theorem,
        assumptions: None,
        bounds: None,
        neg_fail: None,
        refusal: None,
    };
    match check_assumptions(scenario, theorem) {
        Ok(report) => out.assumptions = Some(report),
        Err(e) => {
            out.refusal = Some(e.to_string());
            return out;
        }
    }
    let bounds = match theorem {
        Theorem::ThmA1 => thm_a1_bounds(scenario, epsilon),
        Theorem::ThmA2Neg => thm_a2_neg_bounds(scenario, epsilon),
        Theorem::ThmA3Pos => thm_a3_pos_bounds(scenario, epsilon),
        Theorem::PropNegFail => {
            match prop_neg_fail_check(scenario) {
                Ok(r) => out.neg_fail = Some(r),
                Err(e) => out.refusal = Some(e.to_string()),
            }
            return out;
        }
    };
    match bounds {
        Ok(b) => out.bounds = Some(b),
        Err(e) => out.refusal = Some(e.to_string()),
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub code_version: &'static str,
    pub dataset: PathBuf,
    pub values: Option<PathBuf>,
    pub examples: usize,
    pub acc: f64,
    pub acc_w: f64,
    pub hacc: Option<f64>,
    pub hacc_w: Option<f64>,
}

/// Acc and Acc-W always; HAcc and HAcc-W when value estimates are given.
pub fn run_metrics(dataset: &Path, values: Option<&Path>) -> Result<MetricsReport> {
    let ds = read_dataset(dataset)?;
    let (h, hw) = match values {
        Some(p) => {
            let v = read_values(p)?;
            (
                Some(hacc(&ds, &v)?),
                Some(weighted_variant(&ds, Some(&v), true)?),
            )
        }
        None => (None, None),
    };
    Ok(MetricsReport {
        code_version: CODE_VERSION,
        dataset: dataset.to_path_buf(),
        values: values.map(Path::to_path_buf),
        examples: ds.len(),
        acc: acc(&ds)?,
        acc_w: weighted_variant(&ds, None, false)?,
        hacc: h,
        hacc_w: hw,
    })
}

/// Resolves a path from a config file against the config's directory.
pub fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config
        .parent()
        .map_or_else(|| p.to_path_buf(), |d| d.join(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rewardlab_core::build_fig2_scenario;

    #[test]
    fn fnv_hash_is_the_published_function() {
        // FNV-1a 64 test vectors
        assert_eq!(stable_hash(""), 0xcbf29ce484222325);
        assert_eq!(stable_hash("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(derive_seed(0, "a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn aligned_copy_keeps_truth_and_init() {
        let s = build_fig2_scenario(0.1, true).unwrap();
        let a = aligned_to_truth(&s).unwrap();
        assert_eq!(a.rewards().proxy(), s.rewards().ground_truth());
        assert_eq!(a.initial_probs(), s.initial_probs());
    }
}
