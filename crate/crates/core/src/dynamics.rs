//! Exact policy gradients and the optimization trajectories built on them.
//!
//! Gradient flow `d theta / dt = grad V(theta)` is integrated with explicit
//! Euler or classical RK4; time is `t = step * eta`. REINFORCE replaces the
//! exact gradient by the single-sample estimate `r(y) grad ln pi(y)`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{dot, softmax_into, tv_distance, FeatureSet, PolicyParams, RewardChoice};
use crate::scenarios::Scenario;

/// Name of the generator used by [`run_reinforce`], recorded in outputs.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
        }
    }
}

/// Discretization of gradient flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    /// Stop once `V_G` reaches this value; the crossing step and the step
    /// before it are always recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_truth_value: Option<f64>,
    /// Keep `theta` at every recorded step.
    #[serde(default)]
    pub record_params: bool,
}

fn default_method() -> Method {
    Method::Euler
}

fn default_step_size() -> f64 {
    0.1
}

fn default_max_steps() -> u64 {
    10_000_000
}

fn default_record_every() -> u64 {
    100
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            step_size: default_step_size(),
            max_steps: default_max_steps(),
            record_every: default_record_every(),
            stop_at_truth_value: None,
            record_params: false,
        }
    }
}

impl IntegratorConfig {
    pub fn euler(step_size: f64, max_steps: u64) -> Self {
        Self {
            method: Method::Euler,
            step_size,
            max_steps,
            ..Self::default()
        }
    }

    pub fn rk4(step_size: f64, max_steps: u64) -> Self {
        Self {
            method: Method::Rk4,
            step_size,
            max_steps,
            ..Self::default()
        }
    }

    pub fn with_record_every(mut self, record_every: u64) -> Self {
        self.record_every = record_every;
        self
    }

    pub fn with_stop(mut self, truth_value: f64) -> Self {
        self.stop_at_truth_value = Some(truth_value);
        self
    }

    pub fn with_params(mut self) -> Self {
        self.record_params = true;
        self
    }

    /// Enough steps to reach time `horizon`.
    pub fn steps_for(step_size: f64, horizon: f64) -> u64 {
        (horizon / step_size).ceil() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.max_steps == 0 || self.record_every == 0 {
            return Err(Error::Config(
                "max_steps and record_every must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Short form such as `rk4(eta=0.5)`.
    pub fn descriptor(&self) -> String {
        format!("{}(eta={})", self.method.as_str(), self.step_size)
    }
}

/// Recorded optimization trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
    pub v_proxy: Vec<f64>,
    pub v_truth: Vec<f64>,
    pub reward_variance_proxy: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_snapshots: Option<Vec<Vec<f64>>>,
    /// Steps at which the optimized objective decreased by more than
    /// `1e-9 * eta` (always zero for REINFORCE, where it is not tracked).
    pub monotonicity_violations: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_probs(&self) -> Option<&[f64]> {
        self.probs.last().map(Vec::as_slice)
    }

    /// Probability of one output across the recorded steps.
    pub fn prob_series(&self, index: usize) -> impl Iterator<Item = f64> + '_ {
        self.probs.iter().map(move |p| p[index])
    }

    pub fn max_prob(&self, index: usize) -> f64 {
        self.prob_series(index).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_v_truth(&self) -> f64 {
        self.v_truth
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Total time between consecutive recorded steps that both have
    /// `pi(index) > level`.
    pub fn time_with_prob_above(&self, index: usize, level: f64) -> f64 {
        self.times
            .windows(2)
            .zip(self.probs.windows(2))
            .filter(|(_, p)| p[0][index] > level && p[1][index] > level)
            .map(|(t, _)| t[1] - t[0])
            // an empty float `sum` is -0.0
            .fold(0.0, |acc, dt| acc + dt)
    }
}

/// Reusable buffers for gradient evaluation.
struct GradientWork<'a> {
    features: &'a FeatureSet,
    rewards: &'a [f64],
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl<'a> GradientWork<'a> {
    fn new(features: &'a FeatureSet, rewards: &'a [f64]) -> Self {
        let n = features.len();
        Self {
            features,
            rewards,
            logits: vec![0.0; n],
            probs: vec![0.0; n],
        }
    }

    fn update_probs(&mut self, theta: &[f64]) {
        for (l, v) in self.logits.iter_mut().zip(self.features.vectors()) {
            *l = dot(v, theta);
        }
        softmax_into(&self.logits, &mut self.probs);
    }

    /// Writes `grad V(theta)` into `out`; returns `V(theta)`. Leaves the
    /// probabilities at `theta` in `self.probs`.
    fn gradient(&mut self, theta: &[f64], out: &mut [f64]) -> f64 {
        self.update_probs(theta);
        let value = dot(&self.probs, self.rewards);
        out.iter_mut().for_each(|g| *g = 0.0);
        for ((p, r), v) in self
            .probs
            .iter()
            .zip(self.rewards)
            .zip(self.features.vectors())
        {
            let w = p * (r - value);
            for (g, x) in out.iter_mut().zip(v) {
                *g += w * x;
            }
        }
        value
    }
}

fn check_params(features: &FeatureSet, params: &PolicyParams, rewards: &[f64]) -> Result<()> {
    if params.dim() != features.dim() {
        return Err(Error::DimensionMismatch {
            expected: features.dim(),
            actual: params.dim(),
            context: "parameter vector",
        });
    }
    if rewards.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: rewards.len(),
            context: "reward vector",
        });
    }
    Ok(())
}

fn check_index(index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { index, len })
    }
}

/// `grad V(theta) = sum_y pi(y) A(y) phi(y)`.
pub fn exact_gradient(
    features: &FeatureSet,
    params: &PolicyParams,
    rewards: &[f64],
) -> Result<Vec<f64>> {
    check_params(features, params, rewards)?;
    let mut work = GradientWork::new(features, rewards);
    let mut grad = vec![0.0; features.dim()];
    work.gradient(&params.theta, &mut grad);
    Ok(grad)
}

/// Time derivative of the logit `<phi(y), theta>` under gradient flow:
/// `sum_z pi(z) A(z) <phi(z), phi(y)>`.
pub fn logit_derivative(
    features: &FeatureSet,
    params: &PolicyParams,
    rewards: &[f64],
    output_index: usize,
) -> Result<f64> {
    check_params(features, params, rewards)?;
    check_index(output_index, features.len())?;
    let mut work = GradientWork::new(features, rewards);
    work.update_probs(&params.theta);
    let value = dot(&work.probs, rewards);
    Ok((0..features.len())
        .map(|z| work.probs[z] * (rewards[z] - value) * features.inner(z, output_index))
        .sum())
}

/// Time derivative of `pi(y)` under gradient flow:
/// `pi(y) <phi(y) - sum_z pi(z) phi(z), grad V>`.
pub fn probability_derivative(
    features: &FeatureSet,
    params: &PolicyParams,
    rewards: &[f64],
    output_index: usize,
) -> Result<f64> {
    check_params(features, params, rewards)?;
    check_index(output_index, features.len())?;
    let mut work = GradientWork::new(features, rewards);
    let mut grad = vec![0.0; features.dim()];
    work.gradient(&params.theta, &mut grad);
    let probs = &work.probs;
    let own = dot(features.vector(output_index)?, &grad);
    let mean: f64 = (0..features.len())
        .map(|z| probs[z] * dot(&features.vectors()[z], &grad))
        .sum();
    Ok(probs[output_index] * (own - mean))
}

/// One REINFORCE sample at `theta`: draws `y ~ pi_theta` and returns it with
/// the update direction `r(y) (phi(y) - sum_z pi(z) phi(z))`.
pub fn reinforce_estimate<R: Rng + ?Sized>(
    features: &FeatureSet,
    params: &PolicyParams,
    rewards: &[f64],
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    check_params(features, params, rewards)?;
    let mut work = GradientWork::new(features, rewards);
    work.update_probs(&params.theta);
    let mean = mean_feature(features, &work.probs);
    let y = sample(&work.probs, rng)?;
    let direction = features.vectors()[y]
        .iter()
        .zip(&mean)
        .map(|(x, m)| rewards[y] * (x - m))
        .collect();
    Ok((y, direction))
}

fn mean_feature(features: &FeatureSet, probs: &[f64]) -> Vec<f64> {
    let mut mean = vec![0.0; features.dim()];
    for (p, v) in probs.iter().zip(features.vectors()) {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += p * x;
        }
    }
    mean
}

fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let dist = WeightedIndex::new(probs).map_err(|e| Error::Integration {
        step: 0,
        what: format!("sampling weights: {e}"),
    })?;
    Ok(dist.sample(rng))
}

/// Records samples and keeps the state preceding the current step so that
/// a threshold crossing can be bracketed exactly.
struct Recorder {
    traj: Trajectory,
    record_every: u64,
    eta: f64,
    proxy: Vec<f64>,
    truth: Vec<f64>,
    last_recorded: Option<u64>,
    prev_step: Option<u64>,
    prev_probs: Vec<f64>,
    prev_theta: Vec<f64>,
}

impl Recorder {
    fn new(scenario: &Scenario, cfg: &IntegratorConfig) -> Self {
        Self {
            traj: Trajectory {
                params_snapshots: cfg.record_params.then(Vec::new),
                ..Trajectory::default()
            },
            record_every: cfg.record_every,
            eta: cfg.step_size,
            proxy: scenario.rewards().proxy().to_vec(),
            truth: scenario.rewards().ground_truth().to_vec(),
            last_recorded: None,
            prev_step: None,
            prev_probs: vec![0.0; scenario.features().len()],
            prev_theta: vec![0.0; scenario.features().dim()],
        }
    }

    fn push(&mut self, step: u64, probs: &[f64], theta: &[f64]) {
        if self.last_recorded == Some(step) {
            return;
        }
        let v_p = dot(probs, &self.proxy);
        let var: f64 = probs
            .iter()
            .zip(&self.proxy)
            .map(|(p, r)| p * (r - v_p) * (r - v_p))
            .sum();
        self.traj.steps.push(step);
        self.traj.times.push(step as f64 * self.eta);
        self.traj.v_proxy.push(v_p);
        self.traj.v_truth.push(dot(probs, &self.truth));
        self.traj.reward_variance_proxy.push(var);
        self.traj.probs.push(probs.to_vec());
        if let Some(snaps) = self.traj.params_snapshots.as_mut() {
            snaps.push(theta.to_vec());
        }
        self.last_recorded = Some(step);
    }

    /// Handles the state at `step`; returns true when the run should stop.
    fn observe(
        &mut self,
        step: u64,
        probs: &[f64],
        theta: &[f64],
        stop_at: Option<f64>,
        last: bool,
    ) -> bool {
        let Some(threshold) = stop_at else {
            if last || step % self.record_every == 0 {
                self.push(step, probs, theta);
            }
            return false;
        };
        let stop = dot(probs, &self.truth) >= threshold;
        if stop {
            if let Some(prev) = self.prev_step {
                let (p, t) = (
                    std::mem::take(&mut self.prev_probs),
                    std::mem::take(&mut self.prev_theta),
                );
                self.push(prev, &p, &t);
            }
        }
        if stop || last || step % self.record_every == 0 {
            self.push(step, probs, theta);
        }
        if !stop {
            self.prev_step = Some(step);
            self.prev_probs.copy_from_slice(probs);
            self.prev_theta.copy_from_slice(theta);
        }
        stop
    }
}

fn non_finite(step: u64, what: &str) -> Error {
    Error::Integration {
        step,
        what: what.to_string(),
    }
}

/// Integrates gradient flow on the chosen reward from the scenario's
/// `theta_0`.
pub fn run_flow(
    scenario: &Scenario,
    reward_choice: RewardChoice,
    integrator: &IntegratorConfig,
) -> Result<Trajectory> {
    integrator.validate()?;
    let features = scenario.features();
    let rewards = scenario.rewards().get(reward_choice);
    let eta = integrator.step_size;
    let d = features.dim();
    let mut theta = scenario.initial_params()?.theta;
    let mut work = GradientWork::new(features, rewards);
    let mut k1 = vec![0.0; d];
    let (mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut recorder = Recorder::new(scenario, integrator);
    let mut prev_value: Option<f64> = None;
    let tolerance = 1e-9 * eta;
    let mut warned = false;

    for step in 0..=integrator.max_steps {
        let value = work.gradient(&theta, &mut k1);
        if !value.is_finite() || k1.iter().any(|g| !g.is_finite()) {
            return Err(non_finite(step, "expected reward or gradient"));
        }
        if let Some(prev) = prev_value {
            if value < prev - tolerance {
                recorder.traj.monotonicity_violations += 1;
                if !warned {
                    log::warn!(
                        "objective decreased at step {step} ({prev} -> {value}); step size {eta} may be too large"
                    );
                    warned = true;
                }
            }
        }
        prev_value = Some(value);
        let last = step == integrator.max_steps;
        if recorder.observe(
            step,
            &work.probs,
            &theta,
            integrator.stop_at_truth_value,
            last,
        ) || last
        {
            break;
        }
        match integrator.method {
            Method::Euler => {
                for (t, g) in theta.iter_mut().zip(&k1) {
                    *t += eta * g;
                }
            }
            Method::Rk4 => {
                axpy(&mut tmp, &theta, 0.5 * eta, &k1);
                work.gradient(&tmp, &mut k2);
                axpy(&mut tmp, &theta, 0.5 * eta, &k2);
                work.gradient(&tmp, &mut k3);
                axpy(&mut tmp, &theta, eta, &k3);
                work.gradient(&tmp, &mut k4);
                for i in 0..d {
                    theta[i] += eta / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(non_finite(step + 1, "parameters"));
        }
    }
    Ok(recorder.traj)
}

/// `out = x + a * y`.
fn axpy(out: &mut [f64], x: &[f64], a: f64, y: &[f64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

/// Stochastic ascent on the proxy with one sampled output per step:
/// `theta += eta r_P(y) grad ln pi(y)`, `y ~ pi_theta`. The integration
/// method is ignored.
pub fn run_reinforce(
    scenario: &Scenario,
    integrator: &IntegratorConfig,
    seed: u64,
) -> Result<Trajectory> {
    integrator.validate()?;
    let features = scenario.features();
    let rewards = scenario.rewards().proxy();
    let eta = integrator.step_size;
    let mut theta = scenario.initial_params()?.theta;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = GradientWork::new(features, rewards);
    let mut recorder = Recorder::new(scenario, integrator);

    for step in 0..=integrator.max_steps {
        work.update_probs(&theta);
        if work.probs.iter().any(|p| !p.is_finite()) {
            return Err(non_finite(step, "probabilities"));
        }
        let last = step == integrator.max_steps;
        if recorder.observe(
            step,
            &work.probs,
            &theta,
            integrator.stop_at_truth_value,
            last,
        ) || last
        {
            break;
        }
        let mean = mean_feature(features, &work.probs);
        let y = sample(&work.probs, &mut rng).map_err(|_| non_finite(step, "sampling weights"))?;
        let scale = eta * rewards[y];
        for ((t, x), m) in theta.iter_mut().zip(&features.vectors()[y]).zip(&mean) {
            *t += scale * (x - m);
        }
    }
    Ok(recorder.traj)
}

/// Target of a hitting-time query: the optimal ground-truth reward and the
/// gap `Delta_1` that bounds admissible `epsilon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingTarget {
    pub r_star: f64,
    pub delta1: f64,
}

impl HittingTarget {
    /// `r_G(y*)` and the scenario's `Delta_1`.
    pub fn ground_truth(scenario: &Scenario) -> Self {
        let spec = scenario.structure();
        Self {
            r_star: scenario.rewards().ground_truth()[spec.star_index],
            delta1: spec.delta1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingTimeResult {
    pub epsilon: f64,
    /// `None` when the horizon ended first.
    pub t_hit: Option<f64>,
    pub threshold: f64,
}

impl HittingTimeResult {
    pub fn reached(&self) -> bool {
        self.t_hit.is_some()
    }
}

/// First time with `V_G >= r_G(y*) - epsilon`, linearly interpolated
/// between the bracketing recorded steps.
pub fn hitting_time(
    traj: &Trajectory,
    epsilon: f64,
    target: HittingTarget,
) -> Result<HittingTimeResult> {
    if !(epsilon > 0.0 && epsilon < target.delta1) {
        return Err(Error::Parameter(format!(
            "epsilon must lie in (0, {}), got {epsilon}",
            target.delta1
        )));
    }
    let threshold = target.r_star - epsilon;
    let mut t_hit = None;
    for i in 0..traj.v_truth.len() {
        let v = traj.v_truth[i];
        if v >= threshold {
            t_hit = Some(if i == 0 {
                traj.times[0]
            } else {
                let (t0, t1) = (traj.times[i - 1], traj.times[i]);
                let v0 = traj.v_truth[i - 1];
                t0 + (threshold - v0) / (v - v0) * (t1 - t0)
            });
            break;
        }
    }
    Ok(HittingTimeResult {
        epsilon,
        t_hit,
        threshold,
    })
}

/// TV distance between the proxy-trained and truth-trained policies over
/// time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TvSeries {
    pub times: Vec<f64>,
    pub tv: Vec<f64>,
}

impl TvSeries {
    pub fn max(&self) -> f64 {
        self.tv.iter().copied().fold(0.0, f64::max)
    }
}

/// Runs gradient flow on both rewards from the same `theta_0` up to time
/// `horizon` and compares the policies at every recorded step.
pub fn tv_divergence_pair(
    scenario: &Scenario,
    integrator: &IntegratorConfig,
    horizon: f64,
) -> Result<TvSeries> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Parameter(format!(
            "horizon must be finite and >= 0, got {horizon}"
        )));
    }
    let cfg = IntegratorConfig {
        max_steps: IntegratorConfig::steps_for(integrator.step_size, horizon).max(1),
        stop_at_truth_value: None,
        ..integrator.clone()
    };
    let proxy = run_flow(scenario, RewardChoice::Proxy, &cfg)?;
    let truth = run_flow(scenario, RewardChoice::GroundTruth, &cfg)?;
    let mut series = TvSeries::default();
    for ((t, p), q) in proxy.times.iter().zip(&proxy.probs).zip(&truth.probs) {
        series.times.push(*t);
        series.tv.push(tv_distance(p, q)?);
    }
    Ok(series)
}
