//! Experiment configuration files.
//!
//! A config is a JSON object with a `schema_version`, a `kind` naming the
//! job, and the job's fields. Unknown keys are rejected and errors carry
//! the key path of the offending value.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rewardlab_core::{
    build_error_scenario, build_fig2_scenario, build_geometry_scenario, build_neg_fail_scenario,
    with_assumption_window, ErrorCategory, ErrorKnobs, Geometry, IntegratorConfig, RewardChoice,
    RewardTable, Scenario, StructuredRewardSpec, Theorem, TvBudget,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// How the base scenario is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseScenario {
    /// Standard-basis features, rewards 1 / 0.8 / -1, `pi_0(y_med) = 0.5`.
    Fig2 {
        pi0_star: f64,
        #[serde(default)]
        low_proxy: bool,
    },
    /// Five outputs with `|phi(y*)| = 1.5` and the given inner-product sign.
    Geometry {
        geometry: Geometry,
    },
    /// Three outputs with `theta_0 = c (phi(y_bad) - phi(y*))`.
    NegFail {
        rho: f64,
        lambda: f64,
        c: f64,
        truth: [f64; 3],
    },
    Inline(Box<Scenario>),
}

/// Error category to realize on top of the base scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSpec {
    pub category: ErrorCategory,
    #[serde(default)]
    pub knobs: ErrorKnobs,
}

/// Re-initialization inside a theorem's admissible window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub theorem: Theorem,
    pub star_fraction: f64,
}

/// A base scenario plus modifications applied in field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub base: BaseScenario,
    /// Replaces both reward functions by this ground truth before any
    /// further modification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<Scenario> {
        let mut s = match &self.base {
            BaseScenario::Fig2 {
                pi0_star,
                low_proxy,
            } => build_fig2_scenario(*pi0_star, *low_proxy)?,
            BaseScenario::Geometry { geometry } => build_geometry_scenario(*geometry)?,
            BaseScenario::NegFail {
                rho,
                lambda,
                c,
                truth,
            } => build_neg_fail_scenario(*rho, *lambda, *c, *truth)?,
            BaseScenario::Inline(s) => (**s).clone(),
        };
        if let Some(truth) = &self.ground_truth {
            s = with_ground_truth(&s, truth)?;
        }
        if let Some(w) = &self.window {
            s = with_assumption_window(&s, w.theorem, w.star_fraction)?;
        }
        if let Some(e) = &self.error {
            s = build_error_scenario(e.category, &s, &e.knobs)?;
        }
        if let Some(seed) = self.seed {
            s = s.with_seed(seed);
        }
        Ok(s)
    }
}

fn with_ground_truth(base: &Scenario, truth: &[f64]) -> Result<Scenario> {
    let spec = base.structure();
    let mut parts = base.parts().clone();
    parts.rewards = RewardTable::aligned(truth.to_vec())?;
    parts.structure = StructuredRewardSpec::new(truth, spec.star_index, spec.med_index)?;
    parts.structure_over = RewardChoice::GroundTruth;
    Ok(Scenario::from_parts(parts)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    GradientFlow,
    Reinforce,
}

/// One optimization run of a simulate job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Also the stem of the trajectory file; letters, digits, `-` and `_`.
    pub name: String,
    /// Reward being maximized. REINFORCE on the ground truth samples from a
    /// copy of the scenario whose proxy equals the ground truth.
    pub objective: RewardChoice,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// TV distance between the proxy and ground-truth runs up to a horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvSpec {
    pub horizon: f64,
    #[serde(default)]
    pub integrator: IntegratorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateJob {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub runs: Vec<RunSpec>,
    /// Hitting-time tolerance reported for every run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv: Option<TvSpec>,
}

/// Theorem hypotheses and bounds for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckJob {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub theorems: Vec<Theorem>,
    pub epsilon: f64,
    /// Also evaluate the low-probability TV threshold for this budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_budget: Option<TvBudget>,
}

/// Ranking metrics of a preference dataset; paths are relative to the
/// config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsJob {
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptParameter {
    #[default]
    Pi0Star,
}

/// A scalar, or one value per swept value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerValue {
    One(f64),
    Each(Vec<f64>),
}

impl PerValue {
    pub fn get(&self, index: usize) -> f64 {
        match self {
            PerValue::One(v) => *v,
            PerValue::Each(vs) => vs[index],
        }
    }
}

/// Which of the two runs a sweep performs per value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepRun {
    Proxy,
    Truth,
}

fn both_runs() -> Vec<SweepRun> {
    vec![SweepRun::Proxy, SweepRun::Truth]
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Must use the `fig2` base; its `pi0_star` is replaced by each value.
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub parameter: SweptParameter,
    pub values: Vec<f64>,
    pub epsilon: PerValue,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// REINFORCE repetitions per value; the row reports their median.
    #[serde(default = "one")]
    pub replicates: u32,
    #[serde(default = "both_runs")]
    pub runs: Vec<SweepRun>,
    /// Theorem whose bounds fill the bound columns when its hypotheses hold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Theorem>,
    /// Fit `ln t_hit` against `ln pi0_star` for this run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<SweepRun>,
    #[serde(default)]
    pub write_trajectories: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(CliError::Invalid("sweep value list is empty".into()));
        }
        if let Some(v) = self.values.iter().find(|v| !(**v > 0.0 && **v < 0.5)) {
            return Err(CliError::Invalid(format!(
                "swept pi0_star must lie in (0, 0.5), got {v}"
            )));
        }
        if let PerValue::Each(eps) = &self.epsilon {
            if eps.len() != self.values.len() {
                return Err(CliError::Invalid(format!(
                    "epsilon has {} entries for {} values",
                    eps.len(),
                    self.values.len()
                )));
            }
        }
        if !matches!(self.scenario.base, BaseScenario::Fig2 { .. }) {
            return Err(CliError::Invalid(
                "pi0_star sweeps need the fig2 base scenario".into(),
            ));
        }
        if self.runs.is_empty() {
            return Err(CliError::Invalid("a sweep needs at least one run".into()));
        }
        if self.replicates == 0 {
            return Err(CliError::Invalid("replicates must be >= 1".into()));
        }
        if let Some(run) = self.fit {
            if !self.runs.contains(&run) {
                return Err(CliError::Invalid(format!(
                    "fit requested for {run:?} run, which is not performed"
                )));
            }
        }
        self.integrator.validate()?;
        Ok(())
    }

    /// Scenario spec for the `index`-th value.
    pub fn scenario_for(&self, index: usize) -> ScenarioSpec {
        let mut spec = self.scenario.clone();
        if let BaseScenario::Fig2 { pi0_star, .. } = &mut spec.base {
            *pi0_star = self.values[index];
        }
        spec
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Config {
    Simulate(SimulateJob),
    Sweep(SweepSpec),
    Check(CheckJob),
    Metrics(MetricsJob),
}

impl Config {
    pub fn kind(&self) -> &'static str {
        match self {
            Config::Simulate(_) => "simulate",
            Config::Sweep(_) => "sweep",
            Config::Check(_) => "check",
            Config::Metrics(_) => "metrics",
        }
    }

    /// The JSON form, including `schema_version` and `kind`.
    pub fn to_value(&self) -> Value {
        let body = match self {
            Config::Simulate(j) => serde_json::to_value(j),
            Config::Sweep(j) => serde_json::to_value(j),
            Config::Check(j) => serde_json::to_value(j),
            Config::Metrics(j) => serde_json::to_value(j),
        }
        .expect("config types serialize to JSON");
        let mut map = serde_json::Map::new();
        map.insert("schema_version".into(), SCHEMA_VERSION.into());
        map.insert("kind".into(), self.kind().into());
        if let Value::Object(fields) = body {
            map.extend(fields);
        }
        Value::Object(map)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("JSON values serialize")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Invalid(format!("not valid JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(mut map) = value else {
            return Err(CliError::Invalid("config must be a JSON object".into()));
        };
        match map.remove("schema_version") {
            None => return Err(CliError::Invalid("missing schema_version".into())),
            Some(v) if v.as_u64() == Some(u64::from(SCHEMA_VERSION)) => {}
            Some(v) => {
                return Err(CliError::Invalid(format!(
                    "schema_version {v} is not supported; this build reads version {SCHEMA_VERSION}"
                )))
            }
        }
        let kind = match map.remove("kind") {
            Some(Value::String(k)) => k,
            Some(other) => {
                return Err(CliError::Invalid(format!(
                    "kind must be a string, got {other}"
                )))
            }
            None => return Err(CliError::Invalid("missing kind".into())),
        };
        let body = Value::Object(map);
        let config = match kind.as_str() {
            "simulate" => Config::Simulate(decode(body)?),
            "sweep" => Config::Sweep(decode(body)?),
            "check" => Config::Check(decode(body)?),
            "metrics" => Config::Metrics(decode(body)?),
            other => {
                return Err(CliError::Invalid(format!(
                    "unknown kind {other:?}; expected simulate, sweep, check or metrics"
                )))
            }
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks that do not need a full run: scenario construction, run
    /// names, sweep values.
    pub fn validate(&self) -> Result<()> {
        match self {
            Config::Simulate(j) => {
                j.scenario.build()?;
                let mut names = BTreeSet::new();
                for run in &j.runs {
                    let ok = !run.name.is_empty()
                        && run
                            .name
                            .chars()
                            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
                    if !ok {
                        return Err(CliError::Invalid(format!(
                            "run name {:?} must be nonempty and use only letters, digits, '-' and '_'",
                            run.name
                        )));
                    }
                    if !names.insert(run.name.as_str()) {
                        return Err(CliError::Invalid(format!(
                            "duplicate run name {:?}",
                            run.name
                        )));
                    }
                    run.integrator.validate()?;
                }
                if let Some(tv) = &j.tv {
                    tv.integrator.validate()?;
                }
            }
            Config::Sweep(s) => {
                s.validate()?;
                for i in 0..s.values.len() {
                    s.scenario_for(i).build()?;
                }
            }
            Config::Check(c) => {
                c.scenario.build()?;
            }
            Config::Metrics(_) => {}
        }
        Ok(())
    }
}

fn decode<T: serde::de::DeserializeOwned>(body: Value) -> Result<T> {
    serde_path_to_error::deserialize(body).map_err(|e| {
        let path = e.path().to_string();
        CliError::Invalid(format!("at {path}: {}", e.into_inner()))
    })
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Config::from_json_str(&text).map_err(|e| match e {
        CliError::Invalid(msg) => CliError::Invalid(format!("{}: {msg}", path.display())),
        other => other,
    })
}
