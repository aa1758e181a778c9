//! Experiment descriptions, reward-error categories and assumption checkers.
//!
//! A [`Scenario`] bundles everything a run needs: features, both reward
//! functions, the optimal/mediocre/bad decomposition, the initial policy and
//! a seed. Category labels are verified on construction; a scenario labelled
//! `harmful2` that does not realize the category's inequalities cannot exist.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    advantage, dot, softmax_probs, solve_initial_params, validate_probs, FeatureSet, PolicyParams,
    RewardChoice, RewardTable, StructuredRewardSpec,
};
use crate::theory::{self, formulas};

/// Tolerance for treating two features as orthogonal or a Gram entry as
/// matching its declared value.
pub const GEOMETRY_TOL: f64 = 1e-12;

/// Relative guard applied to non-strict inequalities.
pub const EQUALITY_GUARD: f64 = 1e-12;

/// Tolerance for the softmax of explicit initial parameters to match the
/// declared initial probabilities.
pub const INIT_MATCH_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Benign1,
    Benign2,
    Beneficial1,
    Harmful1,
    Harmful2,
    Custom,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Benign1 => "benign1",
            ErrorCategory::Benign2 => "benign2",
            ErrorCategory::Beneficial1 => "beneficial1",
            ErrorCategory::Harmful1 => "harmful1",
            ErrorCategory::Harmful2 => "harmful2",
            ErrorCategory::Custom => "custom",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sign of the inner product between the optimal and mediocre features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Orthogonal,
    Negative,
    Positive,
}

/// Which theorem's hypotheses to check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Theorem {
    #[serde(rename = "thmA1")]
    ThmA1,
    #[serde(rename = "thmA2_neg")]
    ThmA2Neg,
    #[serde(rename = "thmA3_pos")]
    ThmA3Pos,
    #[serde(rename = "prop_neg_fail")]
    PropNegFail,
}

impl Theorem {
    pub fn as_str(self) -> &'static str {
        match self {
            Theorem::ThmA1 => "thmA1",
            Theorem::ThmA2Neg => "thmA2_neg",
            Theorem::ThmA3Pos => "thmA3_pos",
            Theorem::PropNegFail => "prop_neg_fail",
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Approximation level and horizon for the low-probability TV bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvBudget {
    pub epsilon: f64,
    pub horizon: f64,
}

/// Plain-data form of a [`Scenario`]; used for (de)serialization and for
/// assembling scenarios by hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParts {
    #[serde(default = "default_label")]
    pub label: ErrorCategory,
    pub features: FeatureSet,
    pub rewards: RewardTable,
    pub structure: StructuredRewardSpec,
    /// Reward function the structure describes; the proxy only for the
    /// harmful corollary setting.
    #[serde(default = "default_structure_over")]
    pub structure_over: RewardChoice,
    pub initial_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_params: Option<PolicyParams>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_budget: Option<TvBudget>,
}

fn default_label() -> ErrorCategory {
    ErrorCategory::Custom
}

fn default_structure_over() -> RewardChoice {
    RewardChoice::GroundTruth
}

/// A validated experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioParts", into = "ScenarioParts")]
pub struct Scenario {
    parts: ScenarioParts,
}

impl TryFrom<ScenarioParts> for Scenario {
    type Error = Error;

    fn try_from(parts: ScenarioParts) -> Result<Self> {
        Scenario::from_parts(parts)
    }
}

impl From<Scenario> for ScenarioParts {
    fn from(s: Scenario) -> Self {
        s.parts
    }
}

impl Scenario {
    pub fn from_parts(parts: ScenarioParts) -> Result<Self> {
        let n = parts.features.len();
        if parts.rewards.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: parts.rewards.len(),
                context: "reward table",
            });
        }
        if parts.initial_probs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: parts.initial_probs.len(),
                context: "initial probabilities",
            });
        }
        parts
            .structure
            .validate(parts.rewards.get(parts.structure_over))?;
        validate_probs(&parts.initial_probs, true)?;
        if let Some(params) = &parts.initial_params {
            let probs = softmax_probs(&parts.features, params)?;
            let gap = probs
                .iter()
                .zip(&parts.initial_probs)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if gap > INIT_MATCH_TOL {
                return Err(Error::Config(format!(
                    "initial parameters induce probabilities differing from initial_probs by {gap:.3e}"
                )));
            }
        }
        if let Some(b) = parts.tv_budget {
            if !(b.epsilon > 0.0 && b.horizon >= 0.0 && b.horizon.is_finite()) {
                return Err(Error::Config(
                    "tv_budget needs epsilon > 0 and a finite horizon >= 0".into(),
                ));
            }
        }
        let scenario = Self { parts };
        scenario.verify_category()?;
        Ok(scenario)
    }

    pub fn parts(&self) -> &ScenarioParts {
        &self.parts
    }

    pub fn into_parts(self) -> ScenarioParts {
        self.parts
    }

    pub fn label(&self) -> ErrorCategory {
        self.parts.label
    }

    pub fn features(&self) -> &FeatureSet {
        &self.parts.features
    }

    pub fn rewards(&self) -> &RewardTable {
        &self.parts.rewards
    }

    pub fn structure(&self) -> &StructuredRewardSpec {
        &self.parts.structure
    }

    pub fn structure_over(&self) -> RewardChoice {
        self.parts.structure_over
    }

    pub fn initial_probs(&self) -> &[f64] {
        &self.parts.initial_probs
    }

    pub fn seed(&self) -> u64 {
        self.parts.seed
    }

    pub fn tv_budget(&self) -> Option<TvBudget> {
        self.parts.tv_budget
    }

    pub fn explicit_initial_params(&self) -> Option<&PolicyParams> {
        self.parts.initial_params.as_ref()
    }

    /// `theta_0`: the explicit parameters when given, otherwise the solution
    /// of `<phi(y), theta> = ln pi_0(y)`.
    pub fn initial_params(&self) -> Result<PolicyParams> {
        match &self.parts.initial_params {
            Some(p) => Ok(p.clone()),
            None => solve_initial_params(&self.parts.features, &self.parts.initial_probs),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.parts.seed = seed;
        self
    }

    pub fn with_label(self, label: ErrorCategory) -> Result<Self> {
        let mut parts = self.parts;
        parts.label = label;
        Self::from_parts(parts)
    }

    /// Outputs on which the proxy and ground truth disagree.
    pub fn disagreement_set(&self) -> Vec<usize> {
        self.parts.rewards.disagreement_set()
    }

    /// `V(theta_0)` for the chosen reward function.
    pub fn initial_value(&self, choice: RewardChoice) -> f64 {
        dot(&self.parts.initial_probs, self.parts.rewards.get(choice))
    }

    /// `A(y; theta_0)` for the chosen reward function.
    pub fn initial_advantage(&self, choice: RewardChoice, output_index: usize) -> Result<f64> {
        advantage(
            &self.parts.initial_probs,
            self.parts.rewards.get(choice),
            output_index,
        )
    }

    /// `pi_0` summed over a set of outputs.
    pub fn initial_mass(&self, set: &[usize]) -> f64 {
        set.iter().map(|&i| self.parts.initial_probs[i]).sum()
    }

    /// The unique maximizer of the ground-truth reward.
    pub fn truth_argmax(&self) -> Result<usize> {
        unique_argmax(self.parts.rewards.ground_truth())
    }

    fn verify_category(&self) -> Result<()> {
        let p = &self.parts;
        let fail = |msg: String| Err(Error::Construction(format!("{}: {msg}", p.label)));
        let r_p = p.rewards.proxy();
        let r_g = p.rewards.ground_truth();
        let pi = &p.initial_probs;
        let v_p = self.initial_value(RewardChoice::Proxy);
        let v_g = self.initial_value(RewardChoice::GroundTruth);
        let z = self.disagreement_set();
        match p.label {
            ErrorCategory::Custom => Ok(()),
            ErrorCategory::Benign1 => {
                let star = self.truth_argmax()?;
                if z.is_empty() {
                    return fail("proxy and ground truth agree everywhere".into());
                }
                for &y in &z {
                    if y == star {
                        return fail(format!("output {y} maximizes the ground truth"));
                    }
                    if !(r_p[y] < v_p) {
                        return fail(format!(
                            "r_P({y}) = {} is not below V_P(theta_0) = {v_p}",
                            r_p[y]
                        ));
                    }
                }
                Ok(())
            }
            ErrorCategory::Benign2 => {
                let Some(budget) = p.tv_budget else {
                    return fail("a tv_budget (epsilon, horizon) is required".into());
                };
                if z.is_empty() {
                    return fail("proxy and ground truth agree everywhere".into());
                }
                let threshold = theory::prop2_tv_threshold(
                    p.features.max_norm(),
                    p.rewards.max_gap(&z),
                    budget.epsilon,
                    budget.horizon,
                )?;
                let mass = self.initial_mass(&z);
                if !le_guarded(mass, threshold) {
                    return fail(format!(
                        "pi_0(Z) = {mass:e} exceeds the threshold {threshold:e}"
                    ));
                }
                Ok(())
            }
            ErrorCategory::Beneficial1 => {
                if p.structure_over != RewardChoice::GroundTruth {
                    return fail("structure must describe the ground truth".into());
                }
                let (star, med) = (p.structure.star_index, p.structure.med_index);
                if !(v_g < r_g[med] && r_g[med] < r_g[star]) {
                    return fail(format!(
                        "need V_G(theta_0) < r_G(y_med) < r_G(y*); got {v_g}, {}, {}",
                        r_g[med], r_g[star]
                    ));
                }
                if !(pi[med] > pi[star]) {
                    return fail("need pi_0(y_med) > pi_0(y*)".into());
                }
                if !(r_p[med] < v_p) {
                    return fail(format!(
                        "r_P(y_med) = {} is not below V_P(theta_0) = {v_p}",
                        r_p[med]
                    ));
                }
                Ok(())
            }
            ErrorCategory::Harmful1 => {
                if p.structure_over != RewardChoice::GroundTruth {
                    return fail("structure must describe the ground truth".into());
                }
                let star = p.structure.star_index;
                if z.iter()
                    .any(|y| p.structure.bad_indices.contains(y) && r_p[*y] > r_p[star])
                {
                    Ok(())
                } else {
                    fail("no bad output has r_P(y_bad) > r_P(y*)".into())
                }
            }
            ErrorCategory::Harmful2 => {
                if p.structure_over != RewardChoice::Proxy {
                    return fail("structure must describe the proxy reward".into());
                }
                let star = self.truth_argmax()?;
                let y = p.structure.med_index;
                if star != p.structure.star_index {
                    return fail("the proxy and ground truth optimal outputs differ".into());
                }
                if !(pi[y] > pi[star]) {
                    return fail(format!("need pi_0({y}) > pi_0(y*)"));
                }
                if !(v_p < r_p[y] && r_p[y] < r_p[star]) {
                    return fail(format!(
                        "need V_P(theta_0) < r_P({y}) < r_P(y*); got {v_p}, {}, {}",
                        r_p[y], r_p[star]
                    ));
                }
                if !(r_g[y] < v_g) {
                    return fail(format!(
                        "r_G({y}) = {} is not below V_G(theta_0) = {v_g}",
                        r_g[y]
                    ));
                }
                Ok(())
            }
        }
    }
}

pub(crate) fn unique_argmax(values: &[f64]) -> Result<usize> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut hits = values.iter().enumerate().filter(|(_, v)| **v == max);
    let (idx, _) = hits
        .next()
        .ok_or_else(|| Error::Config("empty reward vector".into()))?;
    if hits.next().is_some() {
        return Err(Error::Config(
            "the maximal reward is attained by more than one output".into(),
        ));
    }
    Ok(idx)
}

/// `a <= b` with a relative roundoff guard.
pub(crate) fn le_guarded(a: f64, b: f64) -> bool {
    a <= b || a - b <= EQUALITY_GUARD * a.abs().max(b.abs())
}

const FIG2_TRUTH: [f64; 5] = [1.0, 0.8, -1.0, -1.0, -1.0];
const FIG2_MED_PROB: f64 = 0.5;

fn fig2_init(pi0_star: f64) -> Vec<f64> {
    let rest = (1.0 - FIG2_MED_PROB - pi0_star) / 3.0;
    vec![pi0_star, FIG2_MED_PROB, rest, rest, rest]
}

/// Five outputs with standard-basis features, ground-truth rewards
/// `(1, 0.8, -1, -1, -1)` and `pi_0 = (pi0_star, 0.5, rest split evenly)`.
/// With `assign_med_low_proxy` the proxy gives the mediocre output `-1`.
pub fn build_fig2_scenario(pi0_star: f64, assign_med_low_proxy: bool) -> Result<Scenario> {
    if !(pi0_star > 0.0 && pi0_star < 0.5) {
        return Err(Error::Parameter(format!(
            "pi0_star must lie in (0, 0.5), got {pi0_star}"
        )));
    }
    let mut proxy = FIG2_TRUTH.to_vec();
    if assign_med_low_proxy {
        proxy[1] = -1.0;
    }
    let rewards = RewardTable::new(proxy, FIG2_TRUTH.to_vec())?;
    Scenario::from_parts(ScenarioParts {
        label: if assign_med_low_proxy {
            ErrorCategory::Beneficial1
        } else {
            ErrorCategory::Custom
        },
        features: FeatureSet::standard_basis(5)?,
        structure: StructuredRewardSpec::new(&FIG2_TRUTH, 0, 1)?,
        rewards,
        structure_over: RewardChoice::GroundTruth,
        initial_probs: fig2_init(pi0_star),
        initial_params: None,
        seed: 0,
        tv_budget: None,
    })
}

/// Features in `R^5` with `phi(y*) = (3/2, 0, 0, 0, 0)`, a unit-norm
/// mediocre feature at the requested angle and standard-basis bad features.
pub fn geometry_features(kind: Geometry) -> Result<FeatureSet> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let med = match kind {
        Geometry::Orthogonal => [0.0, 1.0, 0.0, 0.0, 0.0],
        Geometry::Negative => [-h, h, 0.0, 0.0, 0.0],
        Geometry::Positive => [h, h, 0.0, 0.0, 0.0],
    };
    FeatureSet::new(vec![
        vec![1.5, 0.0, 0.0, 0.0, 0.0],
        med.to_vec(),
        vec![0.0, 0.0, 1.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0, 1.0],
    ])
}

/// The standard-basis rewards (proxy equal to ground truth) and initial policy on
/// one of three feature geometries.
pub fn build_geometry_scenario(kind: Geometry) -> Result<Scenario> {
    Scenario::from_parts(ScenarioParts {
        label: ErrorCategory::Custom,
        features: geometry_features(kind)?,
        rewards: RewardTable::aligned(FIG2_TRUTH.to_vec())?,
        structure: StructuredRewardSpec::new(&FIG2_TRUTH, 0, 1)?,
        structure_over: RewardChoice::GroundTruth,
        initial_probs: fig2_init(0.05),
        initial_params: None,
        seed: 0,
        tv_budget: None,
    })
}

/// Three outputs with `phi(y*) = e1`, `phi(y_med) = -rho e1 + sqrt(1 - rho^2) e2`,
/// `phi(y_bad) = lambda e3` and `theta_0 = c (phi(y_bad) - phi(y*))`.
pub fn build_neg_fail_scenario(rho: f64, lambda: f64, c: f64, truth: [f64; 3]) -> Result<Scenario> {
    if !(0.0 < lambda * lambda && lambda * lambda < rho && rho < 1.0) {
        return Err(Error::Parameter(format!(
            "need 0 < lambda^2 < rho < 1, got rho = {rho}, lambda = {lambda}"
        )));
    }
    let features = FeatureSet::new(vec![
        vec![1.0, 0.0, 0.0],
        vec![-rho, (1.0 - rho * rho).sqrt(), 0.0],
        vec![0.0, 0.0, lambda],
    ])?;
    let params = PolicyParams::new(vec![-c, 0.0, c * lambda])?;
    let initial_probs = softmax_probs(&features, &params)?;
    Scenario::from_parts(ScenarioParts {
        label: ErrorCategory::Custom,
        structure: StructuredRewardSpec::new(&truth, 0, 1)?,
        rewards: RewardTable::aligned(truth.to_vec())?,
        features,
        structure_over: RewardChoice::GroundTruth,
        initial_probs,
        initial_params: Some(params),
        seed: 0,
        tv_budget: None,
    })
}

/// Per-category adjustments for [`build_error_scenario`]. Unset fields take
/// category-specific defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorKnobs {
    /// Output whose reward is altered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    /// New proxy reward of the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_value: Option<f64>,
    /// New proxy reward of `y*` (harmful1 only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub star_proxy: Option<f64>,
    /// Distance of the target's proxy reward below `V_P(theta_0)` (benign1 only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    /// Required for benign2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_budget: Option<TvBudget>,
}

/// Derives a scenario realizing a reward-error category from a base whose
/// proxy and ground truth agree off the altered outputs.
///
/// - `benign1`: the target's proxy reward is set to `V_P(theta_0) - offset`.
/// - `benign2`: the target gets a different proxy reward and `pi_0` is
///   rescaled so that `pi_0(Z)` sits at the low-probability threshold.
/// - `beneficial1`: the mediocre output gets a low proxy reward.
/// - `harmful1`: a bad output gets a proxy reward above that of `y*`.
/// - `harmful2`: the mediocre output keeps its proxy reward but its ground
///   truth becomes the bad level.
pub fn build_error_scenario(
    category: ErrorCategory,
    base: &Scenario,
    knobs: &ErrorKnobs,
) -> Result<Scenario> {
    let mut parts = base.parts().clone();
    parts.label = category;
    let spec = base.structure().clone();
    let default_bad = *spec.bad_indices.first().expect("validated nonempty");
    let rewards = base.rewards();
    let check_target = |t: usize| {
        if t < rewards.len() {
            Ok(t)
        } else {
            Err(Error::IndexOutOfRange {
                index: t,
                len: rewards.len(),
            })
        }
    };
    let range_err = |what: &str, v: f64| {
        Error::Construction(format!(
            "{category}: {what} = {v} falls outside the reward range [-1, 1]"
        ))
    };
    match category {
        ErrorCategory::Custom => {}
        ErrorCategory::Benign1 => {
            let t = check_target(knobs.target.unwrap_or(default_bad))?;
            let v = base.initial_value(RewardChoice::Proxy) - knobs.offset.unwrap_or(0.1);
            let v = knobs.proxy_value.unwrap_or(v);
            if !(-1.0..=1.0).contains(&v) {
                return Err(range_err("r_P(target)", v));
            }
            parts.rewards = rewards.with_proxy(t, v)?;
        }
        ErrorCategory::Benign2 => {
            let t = check_target(knobs.target.unwrap_or(*spec.bad_indices.last().unwrap()))?;
            let budget = knobs.tv_budget.or(base.tv_budget()).ok_or_else(|| {
                Error::Construction("benign2: a tv_budget (epsilon, horizon) is required".into())
            })?;
            let truth = rewards.ground_truth()[t];
            let v = knobs
                .proxy_value
                .unwrap_or(if truth == 1.0 { -1.0 } else { 1.0 });
            parts.rewards = rewards.with_proxy(t, v)?;
            let z = parts.rewards.disagreement_set();
            let threshold = theory::prop2_tv_threshold(
                parts.features.max_norm(),
                parts.rewards.max_gap(&z),
                budget.epsilon,
                budget.horizon,
            )?;
            let mass: f64 = z.iter().map(|&i| parts.initial_probs[i]).sum();
            if mass > threshold {
                let (scale_in, scale_out) = (threshold / mass, (1.0 - threshold) / (1.0 - mass));
                for (i, p) in parts.initial_probs.iter_mut().enumerate() {
                    *p *= if z.contains(&i) { scale_in } else { scale_out };
                }
                parts.initial_params = None;
            }
            parts.tv_budget = Some(budget);
        }
        ErrorCategory::Beneficial1 => {
            let low = spec.bad_reward(rewards.ground_truth());
            parts.rewards = rewards.with_proxy(spec.med_index, knobs.proxy_value.unwrap_or(low))?;
        }
        ErrorCategory::Harmful1 => {
            let t = check_target(knobs.target.unwrap_or(default_bad))?;
            let high = knobs.proxy_value.unwrap_or(1.0);
            let star = knobs.star_proxy.unwrap_or(0.9);
            parts.rewards = rewards
                .with_proxy(t, high)?
                .with_proxy(spec.star_index, star)?;
        }
        ErrorCategory::Harmful2 => {
            let t = check_target(knobs.target.unwrap_or(spec.med_index))?;
            if base.structure_over() != RewardChoice::GroundTruth {
                return Err(Error::Construction(
                    "harmful2: base structure must describe the ground truth".into(),
                ));
            }
            if rewards.proxy() != rewards.ground_truth() {
                return Err(Error::Construction(
                    "harmful2: base proxy must equal the ground truth".into(),
                ));
            }
            if t != spec.med_index {
                return Err(Error::Construction(
                    "harmful2: the altered output must be the mediocre one".into(),
                ));
            }
            // the proxy keeps the mediocre level; the ground truth drops to the bad level
            let low = spec.bad_reward(rewards.proxy());
            let mut truth = rewards.ground_truth().to_vec();
            truth[t] = low;
            parts.rewards = RewardTable::new(rewards.proxy().to_vec(), truth)?;
            parts.structure_over = RewardChoice::Proxy;
        }
    }
    Scenario::from_parts(parts)
}

/// Re-initializes the base so that `pi_0(y*) = star_fraction * cap` for the
/// theorem's cap on `pi_0(y*)`, with `pi_0(Y_bad)` at the midpoint of its
/// admissible window (split evenly over the bad outputs) and the remaining
/// mass on `y_med`.
pub fn with_assumption_window(
    base: &Scenario,
    theorem: Theorem,
    star_fraction: f64,
) -> Result<Scenario> {
    if !(star_fraction > 0.0 && star_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "star_fraction must lie in (0, 1), got {star_fraction}"
        )));
    }
    let spec = base.structure();
    let r = base.rewards().get(base.structure_over());
    let r_med = r[spec.med_index];
    let (d1, d2) = (spec.delta1, spec.delta2);
    let f = base.features();
    let (m, ln_cap) = match theorem {
        Theorem::ThmA1 => (
            formulas::a2_m(d1, d2, r_med),
            formulas::a2_ln_star_cap(d1, d2, r_med),
        ),
        Theorem::ThmA2Neg | Theorem::ThmA3Pos => {
            let (med_sq, b) = (f.norm_sq(spec.med_index), f.max_norm());
            (
                formulas::a3_m_prime(d1, d2, r_med, med_sq, b),
                formulas::a3_ln_star_cap_without_ratio(d1, d2, r_med, med_sq, b),
            )
        }
        Theorem::PropNegFail => {
            return Err(Error::NotApplicable(
                "the failure proposition prescribes theta_0 directly".into(),
            ))
        }
    };
    let upper = 0.1 * r_med;
    let mut star = star_fraction * ln_cap.exp();
    let (mut ybad, mut med) = (0.0, 0.0);
    for _ in 0..64 {
        let lower = formulas::ybad_lower(star, m, d2, r_med);
        if lower > upper {
            return Err(Error::Construction(format!(
                "{theorem}: the window for pi_0(Y_bad) is empty ([{lower}, {upper}])"
            )));
        }
        ybad = 0.5 * (lower + upper);
        med = 1.0 - star - ybad;
        if theorem == Theorem::ThmA1 {
            break;
        }
        let ratio_cap = f.norm_sq(spec.med_index).sqrt() / f.norm_sq(spec.star_index).sqrt() * med;
        let cap = ln_cap.exp().min(ratio_cap);
        if star < cap {
            break;
        }
        star = star_fraction * cap;
    }
    let mut probs = vec![0.0; f.len()];
    probs[spec.star_index] = star;
    probs[spec.med_index] = med;
    let per_bad = ybad / spec.bad_indices.len() as f64;
    for &i in &spec.bad_indices {
        probs[i] = per_bad;
    }
    let mut parts = base.parts().clone();
    parts.initial_probs = probs;
    parts.initial_params = None;
    Scenario::from_parts(parts)
}

/// One evaluated inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionItem {
    pub name: String,
    pub holds: bool,
    /// Left-hand side as evaluated (1/0 for purely structural conditions).
    pub value: f64,
    /// Right-hand side as evaluated.
    pub bound: f64,
    pub relation: String,
}

impl AssumptionItem {
    fn cmp(name: &str, value: f64, relation: &str, bound: f64) -> Self {
        let holds = match relation {
            "<" => value < bound,
            "<=" => le_guarded(value, bound),
            ">" => value > bound,
            ">=" => le_guarded(bound, value),
            _ => unreachable!("unknown relation {relation}"),
        };
        Self {
            name: name.to_string(),
            holds,
            value,
            bound,
            relation: relation.to_string(),
        }
    }

    fn flag(name: &str, holds: bool) -> Self {
        Self {
            name: name.to_string(),
            holds,
            value: if holds { 1.0 } else { 0.0 },
            bound: 1.0,
            relation: "==".to_string(),
        }
    }

    /// `bound - value` for `<`/`<=`, `value - bound` for `>`/`>=`.
    pub fn margin(&self) -> f64 {
        match self.relation.as_str() {
            "<" | "<=" => self.bound - self.value,
            ">" | ">=" => self.value - self.bound,
            _ => {
                if self.holds {
                    0.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Outcome of checking a theorem's hypotheses, with every constant the
/// check computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub theorem: Theorem,
    pub items: Vec<AssumptionItem>,
    pub constants: BTreeMap<String, f64>,
    pub overall: bool,
}

impl AssumptionReport {
    fn new(theorem: Theorem) -> Self {
        Self {
            theorem,
            items: Vec::new(),
            constants: BTreeMap::new(),
            overall: false,
        }
    }

    fn push(&mut self, item: AssumptionItem) {
        self.items.push(item);
    }

    fn set(&mut self, key: &str, value: f64) {
        self.constants.insert(key.to_string(), value);
    }

    fn finish(mut self) -> Self {
        self.overall = self.items.iter().all(|i| i.holds);
        self
    }

    pub fn constant(&self, key: &str) -> Option<f64> {
        self.constants.get(key).copied()
    }

    pub fn failed_items(&self) -> impl Iterator<Item = &AssumptionItem> {
        self.items.iter().filter(|i| !i.holds)
    }
}

/// Whether every bad feature is orthogonal to every other feature.
fn bad_features_orthogonal(f: &FeatureSet, spec: &StructuredRewardSpec) -> bool {
    spec.bad_indices.iter().all(|&b| {
        (0..f.len())
            .filter(|&y| y != b)
            .all(|y| f.inner(b, y).abs() <= GEOMETRY_TOL)
    })
}

/// `r_other` equals `r_struct` except on `y_med`, where `accept` holds.
fn proxy_form_holds(
    r_struct: &[f64],
    r_other: &[f64],
    spec: &StructuredRewardSpec,
    accept: impl Fn(f64, f64) -> bool,
) -> bool {
    let low = spec.bad_reward(r_struct);
    (0..r_struct.len()).all(|y| {
        if y == spec.med_index {
            accept(r_other[y], low)
        } else {
            r_other[y] == r_struct[y]
        }
    })
}

/// Evaluates every hypothesis of `theorem` on the scenario.
///
/// Returns an applicability error when the geometry excludes the theorem
/// outright (for example a non-negative inner product for the negative
/// inner product theorem).
pub fn check_assumptions(scenario: &Scenario, theorem: Theorem) -> Result<AssumptionReport> {
    let f = scenario.features();
    let spec = scenario.structure();
    let (star, med) = (spec.star_index, spec.med_index);
    let s = f.inner(star, med);
    let (star_sq, med_sq) = (f.norm_sq(star), f.norm_sq(med));

    match theorem {
        Theorem::ThmA1 => {}
        Theorem::ThmA2Neg | Theorem::PropNegFail => {
            if !(s < 0.0) {
                return Err(Error::NotApplicable(format!(
                    "{theorem} needs <phi(y*), phi(y_med)> < 0, got {s}"
                )));
            }
        }
        Theorem::ThmA3Pos => {
            if !(med_sq < s && s < star_sq && star_sq < 100.0 * med_sq) {
                return Err(Error::NotApplicable(format!(
                    "{theorem} needs |phi(y_med)|^2 < s < |phi(y*)|^2 < 100 |phi(y_med)|^2; got {med_sq}, {s}, {star_sq}"
                )));
            }
        }
    }
    if theorem != Theorem::ThmA1 && scenario.structure_over() != RewardChoice::GroundTruth {
        return Err(Error::NotApplicable(format!(
            "{theorem} is stated for a structure over the ground truth"
        )));
    }

    let over = scenario.structure_over();
    let r_s = scenario.rewards().get(over);
    let r_o = scenario.rewards().get(over.other());
    let pi = scenario.initial_probs();
    let (d1, d2) = (spec.delta1, spec.delta2);
    let r_med = r_s[med];
    let pi_star = pi[star];
    let pi_med = pi[med];
    let pi_bad: f64 = scenario.initial_mass(&spec.bad_indices);
    let b = f.max_norm();

    let mut report = AssumptionReport::new(theorem);
    report.set("delta1", d1);
    report.set("delta2", d2);
    report.set("s", s);
    report.set("B", b);
    report.set("pi0_star", pi_star);
    report.set("pi0_med", pi_med);
    report.set("pi0_bad", pi_bad);
    // The reward structure is enforced when the scenario is built.
    report.push(AssumptionItem::flag("reward structure", true));

    match theorem {
        Theorem::ThmA1 => {
            report.push(AssumptionItem::flag(
                "orthonormal features",
                f.is_orthonormal(GEOMETRY_TOL),
            ));
            report.push(AssumptionItem::flag(
                "other reward equals structured reward except a bad-level y_med",
                proxy_form_holds(r_s, r_o, spec, |v, low| v == low),
            ));
            let m = formulas::a2_m(d1, d2, r_med);
            let ln_cap = formulas::a2_ln_star_cap(d1, d2, r_med);
            push_window_items(&mut report, m, ln_cap, pi_star, pi_bad, d2, r_med);
            report.set("M", m);
            let ln_gamma = formulas::ln_gamma(pi_star, m);
            report.set("ln_gamma", ln_gamma);
            report.set("gamma", ln_gamma.exp());
            let v0 = scenario.initial_value(over);
            report.set("v0", v0);
            let all_hold = report.items.iter().all(|i| i.holds);
            let lemma = AssumptionItem::cmp(
                "consequence: V(theta_0) < r(y_med) - sqrt(gamma)",
                v0,
                "<",
                r_med - (0.5 * ln_gamma).exp(),
            );
            if all_hold && !lemma.holds {
                log::error!(
                    "assumptions hold but V(theta_0) = {v0} is not below r(y_med) - sqrt(gamma)"
                );
            }
            report.push(lemma);
        }
        Theorem::ThmA2Neg | Theorem::ThmA3Pos => {
            let m = formulas::a3_m_prime(d1, d2, r_med, med_sq, b);
            let ln_cap_base = formulas::a3_ln_star_cap_without_ratio(d1, d2, r_med, med_sq, b);
            let ratio = (med_sq / star_sq).sqrt() * pi_med;
            let ln_cap = ln_cap_base.min(ratio.ln());
            push_window_items(&mut report, m, ln_cap, pi_star, pi_bad, d2, r_med);
            report.set("M_prime", m);
            report.set("ln_gamma", formulas::ln_gamma(pi_star, m));
            report.push(AssumptionItem::flag(
                "bad features orthogonal to all others",
                bad_features_orthogonal(f, spec),
            ));
            if theorem == Theorem::ThmA2Neg {
                report.push(AssumptionItem::cmp("s", s, "<", 0.0));
                let max_bad = spec
                    .bad_indices
                    .iter()
                    .map(|&i| f.norm_sq(i).sqrt())
                    .fold(0.0, f64::max);
                report.push(AssumptionItem::cmp(
                    "|phi(y_med)| >= max |phi(y_bad)|",
                    med_sq.sqrt(),
                    ">=",
                    max_bad,
                ));
                report.push(AssumptionItem::flag(
                    "proxy equals ground truth except r_P(y_med) = min r_G(Y_bad)",
                    proxy_form_holds(r_s, r_o, spec, |v, low| v == low),
                ));
                let alpha = formulas::alpha(s, med_sq);
                let a_star = scenario.initial_advantage(over, star)?;
                report.set("alpha", alpha);
                report.set("h_s", formulas::h(s, med_sq));
                report.set("A_star0", a_star);
                report.set(
                    "K",
                    formulas::k_constant(alpha, r_med, med_sq, star_sq, s, pi_med, a_star),
                );
                report.set("K_prefactor", formulas::k_prefactor(alpha, r_med));
                let degenerate = a_star.abs() < 1e-6;
                report.set("K_degenerate", if degenerate { 1.0 } else { 0.0 });
                if degenerate {
                    log::warn!("A_G(y*; theta_0) = {a_star:e} is close to zero; K degenerates");
                }
            } else {
                report.push(AssumptionItem::cmp("s", s, ">", 0.0));
                report.push(AssumptionItem::flag(
                    "proxy equals ground truth except r_P(y_med) <= min r_G(Y_bad)",
                    proxy_form_holds(r_s, r_o, spec, |v, low| v <= low),
                ));
            }
        }
        Theorem::PropNegFail => {
            report.push(AssumptionItem::flag(
                "bad features orthogonal to all others",
                bad_features_orthogonal(f, spec),
            ));
            report.push(AssumptionItem::cmp("s", s, "<", 0.0));
            let max_bad = spec
                .bad_indices
                .iter()
                .map(|&i| f.norm_sq(i).sqrt())
                .fold(0.0, f64::max);
            report.push(AssumptionItem::cmp(
                "|phi(y_med)| >= max |phi(y_bad)|",
                med_sq.sqrt(),
                ">=",
                max_bad,
            ));
            let (bad, c, d_sq) = neg_fail_direction(scenario)?;
            report.set("bad_index", bad as f64);
            report.set("C", c);
            report.set("d_norm_sq", d_sq);
            let max_other = (0..pi.len())
                .filter(|&y| y != med)
                .map(|y| pi[y])
                .fold(0.0, f64::max);
            report.push(AssumptionItem::cmp(
                "pi_0(y_med) > max other pi_0",
                pi_med,
                ">",
                max_other,
            ));
            report.push(AssumptionItem::cmp(
                "pi_0(y*) <= Delta2 pi_0(Y_bad) / Delta1",
                pi_star,
                "<=",
                d2 * pi_bad / d1,
            ));
            let v0 = scenario.initial_value(RewardChoice::GroundTruth);
            let zeta = formulas::zeta(pi_med, pi[bad], pi_star, v0, r_s[bad], r_s[star]);
            report.set("zeta", zeta);
            report.set("v0", v0);
            report.push(AssumptionItem::cmp("zeta", zeta, ">", 0.0));
            let threshold = 0f64.max(-zeta.ln() / d_sq);
            report.set("C_threshold", threshold);
            report.push(AssumptionItem::cmp("C", c, ">", threshold));
        }
    }
    Ok(report.finish())
}

fn push_window_items(
    report: &mut AssumptionReport,
    m: f64,
    ln_cap: f64,
    pi_star: f64,
    pi_bad: f64,
    d2: f64,
    r_med: f64,
) {
    report.set("ln_star_cap", ln_cap);
    report.set("star_cap", ln_cap.exp());
    report.push(AssumptionItem::cmp(
        "ln pi_0(y*) < ln cap",
        pi_star.ln(),
        "<",
        ln_cap,
    ));
    let lower = formulas::ybad_lower(pi_star, m, d2, r_med);
    let upper = 0.1 * r_med;
    report.set("ybad_lower", lower);
    report.set("ybad_upper", upper);
    report.push(AssumptionItem::cmp(
        "pi_0(Y_bad) >= window lower",
        pi_bad,
        ">=",
        lower,
    ));
    report.push(AssumptionItem::cmp(
        "pi_0(Y_bad) <= window upper",
        pi_bad,
        "<=",
        upper,
    ));
}

/// Finds a bad output with `theta_0 = C (phi(y_bad) - phi(y*))`; returns the
/// output, `C` and `|phi(y_bad) - phi(y*)|^2`.
fn neg_fail_direction(scenario: &Scenario) -> Result<(usize, f64, f64)> {
    let theta = scenario.explicit_initial_params().ok_or_else(|| {
        Error::NotApplicable("theta_0 must be given explicitly as C (phi(y_bad) - phi(y*))".into())
    })?;
    let f = scenario.features();
    let spec = scenario.structure();
    let star = f.vector(spec.star_index)?;
    let theta_norm = dot(&theta.theta, &theta.theta).sqrt();
    for &bad in &spec.bad_indices {
        let d: Vec<f64> = f
            .vector(bad)?
            .iter()
            .zip(star)
            .map(|(b, s)| b - s)
            .collect();
        let d_sq = dot(&d, &d);
        let c = dot(&theta.theta, &d) / d_sq;
        let residual: f64 = theta
            .theta
            .iter()
            .zip(&d)
            .map(|(t, x)| (t - c * x).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= 1e-9 * theta_norm.max(1e-300) {
            return Ok((bad, c, d_sq));
        }
    }
    Err(Error::NotApplicable(
        "theta_0 is not a multiple of phi(y_bad) - phi(y*) for any bad output".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_proxy_med_rewards_and_init() {
        let s = build_fig2_scenario(0.05, true).unwrap();
        assert_eq!(s.rewards().ground_truth(), &[1.0, 0.8, -1.0, -1.0, -1.0]);
        assert_eq!(s.rewards().proxy(), &[1.0, -1.0, -1.0, -1.0, -1.0]);
        let expect = [0.05, 0.5, 0.15, 0.15, 0.15];
        for (a, b) in s.initial_probs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s.label(), ErrorCategory::Beneficial1);
        assert!(s.features().is_orthonormal(0.0));
    }

    #[test]
    fn fig2_top_row_and_range() {
        let s = build_fig2_scenario(0.15, false).unwrap();
        assert_eq!(s.rewards().proxy(), s.rewards().ground_truth());
        assert_eq!(s.label(), ErrorCategory::Custom);
        assert!(build_fig2_scenario(0.5, false).is_err());
        assert!(build_fig2_scenario(0.0, true).is_err());
        assert!(build_fig2_scenario(0.7, true).is_err());
    }

    #[test]
    fn geometry_inner_products() {
        let target = 3.0 / (2.0 * 2f64.sqrt());
        for (kind, s) in [
            (Geometry::Orthogonal, 0.0),
            (Geometry::Negative, -target),
            (Geometry::Positive, target),
        ] {
            let sc = build_geometry_scenario(kind).unwrap();
            let f = sc.features();
            assert!((f.inner(0, 1) - s).abs() < 1e-12, "{kind:?}");
            assert!((f.norm_sq(0) - 2.25).abs() < 1e-12);
            assert!((f.norm_sq(1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn assumption_cap_rejects_fig2_default() {
        let s = build_fig2_scenario(0.05, true).unwrap();
        let report = check_assumptions(&s, Theorem::ThmA1).unwrap();
        assert!(!report.overall);
        let cap = report.constant("star_cap").unwrap();
        assert!(0.05 > cap);
    }

    #[test]
    fn assumption_window_builder_passes() {
        let base = build_fig2_scenario(0.05, true).unwrap();
        let s = with_assumption_window(&base, Theorem::ThmA1, 0.5).unwrap();
        let report = check_assumptions(&s, Theorem::ThmA1).unwrap();
        assert!(
            report.overall,
            "{:#?}",
            report.failed_items().collect::<Vec<_>>()
        );
        let gamma = report.constant("gamma").unwrap();
        assert!(s.initial_value(RewardChoice::GroundTruth) < 0.8 - gamma.sqrt());
    }

    #[test]
    fn theorem_applicability() {
        let orth = build_geometry_scenario(Geometry::Orthogonal).unwrap();
        assert!(matches!(
            check_assumptions(&orth, Theorem::ThmA2Neg),
            Err(Error::NotApplicable(_))
        ));
        assert!(matches!(
            check_assumptions(&orth, Theorem::ThmA3Pos),
            Err(Error::NotApplicable(_))
        ));
        let pos = build_geometry_scenario(Geometry::Positive).unwrap();
        assert!(check_assumptions(&pos, Theorem::ThmA3Pos).is_ok());
    }

    #[test]
    fn neg_fail_worked_example() {
        let s = build_neg_fail_scenario(0.5, 0.5, 3.0, [1.0, 0.8, -1.0]).unwrap();
        let report = check_assumptions(&s, Theorem::PropNegFail).unwrap();
        assert!(report.overall, "{:#?}", report.items);
        assert!((report.constant("C").unwrap() - 3.0).abs() < 1e-12);
        let weak = build_neg_fail_scenario(0.5, 0.5, 1.0, [1.0, 0.8, -1.0]).unwrap();
        let report = check_assumptions(&weak, Theorem::PropNegFail).unwrap();
        assert!(!report.overall);
        assert!(build_neg_fail_scenario(0.5, 0.8, 1.0, [1.0, 0.8, -1.0]).is_err());
    }

    #[test]
    fn neg_fail_requires_explicit_theta() {
        let s = build_geometry_scenario(Geometry::Negative).unwrap();
        assert!(matches!(
            check_assumptions(&s, Theorem::PropNegFail),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn error_categories() {
        let base = build_fig2_scenario(0.05, false).unwrap();

        let h1 =
            build_error_scenario(ErrorCategory::Harmful1, &base, &ErrorKnobs::default()).unwrap();
        assert_eq!(h1.rewards().proxy()[2], 1.0);
        assert_eq!(h1.rewards().proxy()[0], 0.9);

        let b1 =
            build_error_scenario(ErrorCategory::Benign1, &base, &ErrorKnobs::default()).unwrap();
        assert!((b1.rewards().proxy()[2] - (-0.1)).abs() < 1e-15);

        let h2 =
            build_error_scenario(ErrorCategory::Harmful2, &base, &ErrorKnobs::default()).unwrap();
        assert_eq!(h2.rewards().proxy()[1], 0.8);
        assert_eq!(h2.rewards().ground_truth()[1], -1.0);
        assert_eq!(h2.structure_over(), RewardChoice::Proxy);

        let bf = build_error_scenario(ErrorCategory::Beneficial1, &base, &ErrorKnobs::default())
            .unwrap();
        assert_eq!(
            bf.rewards(),
            build_fig2_scenario(0.05, true).unwrap().rewards()
        );

        // missing budget
        assert!(
            build_error_scenario(ErrorCategory::Benign2, &base, &ErrorKnobs::default()).is_err()
        );
        let knobs = ErrorKnobs {
            tv_budget: Some(TvBudget {
                epsilon: 0.05,
                horizon: 1.0,
            }),
            ..Default::default()
        };
        let b2 = build_error_scenario(ErrorCategory::Benign2, &base, &knobs).unwrap();
        let z = b2.disagreement_set();
        assert_eq!(z, vec![4]);
        let threshold = 0.05 / 10f64.exp();
        assert!((b2.initial_mass(&z) - threshold).abs() <= 1e-12 * threshold);
    }

    #[test]
    fn category_violation_is_reported() {
        let base = build_fig2_scenario(0.05, false).unwrap();
        // benign1 with a proxy value above V_P
        let knobs = ErrorKnobs {
            proxy_value: Some(0.5),
            ..Default::default()
        };
        let err = build_error_scenario(ErrorCategory::Benign1, &base, &knobs).unwrap_err();
        assert!(err.to_string().contains("not below"), "{err}");
        // relabeling an aligned scenario as beneficial fails
        assert!(base.with_label(ErrorCategory::Beneficial1).is_err());
    }

    #[test]
    fn explicit_params_must_match_probs() {
        let s = build_fig2_scenario(0.05, true).unwrap();
        let mut parts = s.into_parts();
        parts.initial_params = Some(PolicyParams::zeros(5));
        assert!(Scenario::from_parts(parts).is_err());
    }
}
