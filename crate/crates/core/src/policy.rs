//! Linear softmax policies over a finite output set.
//!
//! Every output `y` carries a nonzero feature vector `phi(y)`; a parameter
//! vector `theta` induces the policy `pi(y) ∝ exp(<phi(y), theta>)`. The
//! functions here evaluate that policy and the reward statistics derived
//! from it. They are pure and allocate only their return values.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logit magnitude above which a diagnostic is logged.
pub const LOGIT_WARN_LIMIT: f64 = 700.0;

/// Tolerance used when validating that a vector is a probability vector.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Feature vectors `phi(y)` for outputs `0..n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureSet")]
pub struct FeatureSet {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeatureSet {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl TryFrom<RawFeatureSet> for FeatureSet {
    type Error = Error;

    fn try_from(raw: RawFeatureSet) -> Result<Self> {
        let set = FeatureSet::new(raw.vectors)?;
        if set.dim != raw.dim {
            return Err(Error::DimensionMismatch {
                expected: raw.dim,
                actual: set.dim,
                context: "declared feature dimension",
            });
        }
        Ok(set)
    }
}

impl FeatureSet {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 outputs, got {}",
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                    context: "feature vector length",
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!(
                    "feature vector {i} has non-finite entries"
                )));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::Config(format!("feature vector {i} is zero")));
            }
        }
        Ok(Self { dim, vectors })
    }

    /// `n` outputs with the standard basis of `R^n` as features.
    pub fn standard_basis(n: usize) -> Result<Self> {
        Self::new(
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, index: usize) -> Result<&[f64]> {
        self.vectors
            .get(index)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange {
                index,
                len: self.len(),
            })
    }

    pub fn inner(&self, i: usize, j: usize) -> f64 {
        dot(&self.vectors[i], &self.vectors[j])
    }

    pub fn norm_sq(&self, i: usize) -> f64 {
        self.inner(i, i)
    }

    /// `B = max_y ||phi(y)||`.
    pub fn max_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| self.norm_sq(i).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn gram(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| (0..self.len()).map(|j| self.inner(i, j)).collect())
            .collect()
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        (0..self.len()).all(|i| {
            (0..self.len()).all(|j| {
                let target = if i == j { 1.0 } else { 0.0 };
                (self.inner(i, j) - target).abs() <= tol
            })
        })
    }

    pub fn logits(&self, params: &PolicyParams) -> Result<Vec<f64>> {
        if params.theta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: params.theta.len(),
                context: "parameter vector",
            });
        }
        Ok(self.vectors.iter().map(|v| dot(v, &params.theta)).collect())
    }
}

/// Which reward function a computation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardChoice {
    Proxy,
    GroundTruth,
}

impl RewardChoice {
    pub fn other(self) -> Self {
        match self {
            RewardChoice::Proxy => RewardChoice::GroundTruth,
            RewardChoice::GroundTruth => RewardChoice::Proxy,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RewardChoice::Proxy => "proxy",
            RewardChoice::GroundTruth => "ground_truth",
        }
    }
}

/// Proxy and ground-truth rewards, both valued in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRewardTable")]
pub struct RewardTable {
    proxy: Vec<f64>,
    ground_truth: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRewardTable {
    proxy: Vec<f64>,
    ground_truth: Vec<f64>,
}

impl TryFrom<RawRewardTable> for RewardTable {
    type Error = Error;

    fn try_from(raw: RawRewardTable) -> Result<Self> {
        RewardTable::new(raw.proxy, raw.ground_truth)
    }
}

impl RewardTable {
    pub fn new(proxy: Vec<f64>, ground_truth: Vec<f64>) -> Result<Self> {
        if proxy.len() != ground_truth.len() {
            return Err(Error::DimensionMismatch {
                expected: ground_truth.len(),
                actual: proxy.len(),
                context: "proxy reward vector",
            });
        }
        for (name, values) in [("proxy", &proxy), ("ground_truth", &ground_truth)] {
            if let Some((i, r)) = values
                .iter()
                .enumerate()
                .find(|(_, r)| !(-1.0..=1.0).contains(*r))
            {
                return Err(Error::Config(format!(
                    "{name} reward of output {i} is {r}, outside [-1, 1]"
                )));
            }
        }
        Ok(Self {
            proxy,
            ground_truth,
        })
    }

    /// Both reward functions equal to `rewards`.
    pub fn aligned(rewards: Vec<f64>) -> Result<Self> {
        Self::new(rewards.clone(), rewards)
    }

    pub fn len(&self) -> usize {
        self.proxy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxy.is_empty()
    }

    pub fn proxy(&self) -> &[f64] {
        &self.proxy
    }

    pub fn ground_truth(&self) -> &[f64] {
        &self.ground_truth
    }

    pub fn get(&self, choice: RewardChoice) -> &[f64] {
        match choice {
            RewardChoice::Proxy => &self.proxy,
            RewardChoice::GroundTruth => &self.ground_truth,
        }
    }

    /// Returns a copy with one proxy entry replaced.
    pub fn with_proxy(&self, index: usize, value: f64) -> Result<Self> {
        let mut proxy = self.proxy.clone();
        *proxy.get_mut(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.len(),
        })? = value;
        Self::new(proxy, self.ground_truth.clone())
    }

    /// Outputs on which the two reward functions disagree.
    pub fn disagreement_set(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.proxy[i] != self.ground_truth[i])
            .collect()
    }

    /// `max_{y in set} |r_P(y) - r_G(y)|`, zero for an empty set.
    pub fn max_gap(&self, set: &[usize]) -> f64 {
        set.iter()
            .map(|&i| (self.proxy[i] - self.ground_truth[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// Parameter vector `theta` of a linear softmax policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicyParams")]
pub struct PolicyParams {
    pub theta: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicyParams {
    theta: Vec<f64>,
}

impl TryFrom<RawPolicyParams> for PolicyParams {
    type Error = Error;

    fn try_from(raw: RawPolicyParams) -> Result<Self> {
        PolicyParams::new(raw.theta)
    }
}

impl PolicyParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(
                "parameter vector has non-finite entries".into(),
            ));
        }
        Ok(Self { theta })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Decomposition of the outputs into an optimal output, a mediocre output
/// and a set of equally bad outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredRewardSpec {
    pub star_index: usize,
    pub med_index: usize,
    pub bad_indices: Vec<usize>,
    /// `r(y*) - r(y_med)`
    pub delta1: f64,
    /// `r(y_med) - r(y_bad)`
    pub delta2: f64,
}

impl StructuredRewardSpec {
    /// Builds the decomposition for the given optimal and mediocre outputs;
    /// every other output is treated as bad.
    pub fn new(rewards: &[f64], star_index: usize, med_index: usize) -> Result<Self> {
        let n = rewards.len();
        for index in [star_index, med_index] {
            if index >= n {
                return Err(Error::IndexOutOfRange { index, len: n });
            }
        }
        if star_index == med_index {
            return Err(Error::Config(
                "y* and y_med must be distinct outputs".into(),
            ));
        }
        let bad_indices: Vec<usize> = (0..n)
            .filter(|&i| i != star_index && i != med_index)
            .collect();
        let Some(&first_bad) = bad_indices.first() else {
            return Err(Error::Config("the set of bad outputs is empty".into()));
        };
        let spec = Self {
            star_index,
            med_index,
            bad_indices,
            delta1: rewards[star_index] - rewards[med_index],
            delta2: rewards[med_index] - rewards[first_bad],
        };
        spec.validate(rewards)?;
        Ok(spec)
    }

    /// Infers the decomposition from the reward values: a unique maximizer,
    /// a unique second level and a common value for all remaining outputs.
    pub fn infer(rewards: &[f64]) -> Result<Self> {
        let mut order: Vec<usize> = (0..rewards.len()).collect();
        order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]));
        if order.len() < 3 {
            return Err(Error::Config("need at least three outputs".into()));
        }
        if rewards[order[0]] == rewards[order[1]] {
            return Err(Error::Config(
                "the maximal reward is attained by more than one output".into(),
            ));
        }
        Self::new(rewards, order[0], order[1])
    }

    /// Checks the decomposition against a reward vector.
    pub fn validate(&self, rewards: &[f64]) -> Result<()> {
        let n = rewards.len();
        let mut seen = vec![false; n];
        for &i in std::iter::once(&self.star_index)
            .chain(std::iter::once(&self.med_index))
            .chain(&self.bad_indices)
        {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!(
                    "output {i} appears twice in the structure"
                )));
            }
        }
        if seen.iter().any(|s| !s) || self.bad_indices.is_empty() {
            return Err(Error::Config(
                "structure indices must partition the outputs with a nonempty bad set".into(),
            ));
        }
        let r_star = rewards[self.star_index];
        let r_med = rewards[self.med_index];
        let r_bad = rewards[self.bad_indices[0]];
        if self.bad_indices.iter().any(|&i| rewards[i] != r_bad) {
            return Err(Error::Config(
                "bad outputs must share one reward value".into(),
            ));
        }
        if !(r_star > r_med && r_med > 0.0 && 0.0 >= r_bad) {
            return Err(Error::Config(format!(
                "rewards must satisfy r(y*) > r(y_med) > 0 >= r(y_bad); got {r_star}, {r_med}, {r_bad}"
            )));
        }
        let (d1, d2) = (r_star - r_med, r_med - r_bad);
        if self.delta1 != d1 || self.delta2 != d2 {
            return Err(Error::Config(format!(
                "declared gaps ({}, {}) do not match rewards ({d1}, {d2})",
                self.delta1, self.delta2
            )));
        }
        Ok(())
    }

    pub fn bad_reward(&self, rewards: &[f64]) -> f64 {
        rewards[self.bad_indices[0]]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(expected: usize, actual: usize, context: &'static str) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            actual,
            context,
        })
    }
}

/// Softmax of the logits `<phi(y), theta>`, computed after subtracting the
/// largest logit.
pub fn softmax_probs(features: &FeatureSet, params: &PolicyParams) -> Result<Vec<f64>> {
    let logits = features.logits(params)?;
    Ok(softmax(&logits))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut probs = vec![0.0; logits.len()];
    softmax_into(logits, &mut probs);
    probs
}

static LOGIT_WARNED: AtomicBool = AtomicBool::new(false);

pub(crate) fn softmax_into(logits: &[f64], probs: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.abs() > LOGIT_WARN_LIMIT && !LOGIT_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("logit magnitude {max:.1} exceeds {LOGIT_WARN_LIMIT}");
    }
    for (p, l) in probs.iter_mut().zip(logits) {
        *p = (l - max).exp();
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
}

/// `V = sum_y pi(y) r(y)`.
pub fn expected_reward(probs: &[f64], rewards: &[f64]) -> Result<f64> {
    check_len(rewards.len(), probs.len(), "probability vector")?;
    Ok(dot(probs, rewards))
}

/// `A(y) = r(y) - V`, evaluated as `sum_z pi(z) (r(y) - r(z))` so that it
/// stays accurate when `V` is close to `r(y)`.
pub fn advantage(probs: &[f64], rewards: &[f64], output_index: usize) -> Result<f64> {
    check_len(rewards.len(), probs.len(), "probability vector")?;
    let r = rewards.get(output_index).ok_or(Error::IndexOutOfRange {
        index: output_index,
        len: rewards.len(),
    })?;
    Ok(probs.iter().zip(rewards).map(|(p, z)| p * (r - z)).sum())
}

/// `Var_{y ~ pi}[r(y)]`.
pub fn reward_variance(probs: &[f64], rewards: &[f64]) -> Result<f64> {
    let value = expected_reward(probs, rewards)?;
    Ok(probs
        .iter()
        .zip(rewards)
        .map(|(p, r)| p * (r - value) * (r - value))
        .sum())
}

/// Total variation distance: half the l1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p.len(), q.len(), "second probability vector")?;
    let l1: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * l1).min(1.0))
}

pub(crate) fn validate_probs(probs: &[f64], strictly_positive: bool) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Parameter(
            "probabilities must be finite and nonnegative".into(),
        ));
    }
    if strictly_positive && probs.iter().any(|p| *p <= 0.0) {
        return Err(Error::Parameter(
            "probabilities must be strictly positive".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::Parameter(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Finds `theta` with `<phi(y), theta> = ln pi(y)` for every output, by least
/// squares. The solution is accepted when the residual is at most
/// `1e-9 * ||ln pi||`.
pub fn solve_initial_params(features: &FeatureSet, target_probs: &[f64]) -> Result<PolicyParams> {
    check_len(
        features.len(),
        target_probs.len(),
        "target probability vector",
    )?;
    validate_probs(target_probs, true)?;
    let n = features.len();
    let d = features.dim();
    let a = DMatrix::from_fn(n, d, |i, j| features.vectors[i][j]);
    let b = DVector::from_iterator(n, target_probs.iter().map(|p| p.ln()));
    let svd = a.clone().svd(true, true);
    let theta = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Config(format!("least-squares solve failed: {e}")))?;
    let residual = (&a * &theta - &b).norm();
    if residual > 1e-9 * b.norm() {
        return Err(Error::Solver { residual });
    }
    PolicyParams::new(theta.iter().copied().collect())
}
