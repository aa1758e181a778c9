//! Ranking-accuracy metrics for reward models and the statistics used to
//! compare them.
//!
//! Every example holds one preferred and `K >= 1` dispreferred outputs.
//! Plain accuracy asks whether the proxy ranks the preferred output
//! strictly above all dispreferred ones; the harm-aware variant also
//! accepts examples where every dispreferred output scores strictly below
//! an estimate of the policy's expected proxy reward.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per prompt used for value estimates unless stated otherwise.
pub const DEFAULT_VALUE_SAMPLES: u32 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOutputRecord")]
pub struct OutputRecord {
    pub proxy_score: f64,
    pub truth_score: f64,
    /// Token count `|y|`.
    pub length: u32,
    /// `ln pi(y | x)`.
    pub log_prob: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutputRecord {
    proxy_score: f64,
    truth_score: f64,
    length: u32,
    log_prob: f64,
}

impl TryFrom<RawOutputRecord> for OutputRecord {
    type Error = Error;

    fn try_from(r: RawOutputRecord) -> Result<Self> {
        OutputRecord::new(r.proxy_score, r.truth_score, r.length, r.log_prob)
    }
}

impl OutputRecord {
    pub fn new(proxy_score: f64, truth_score: f64, length: u32, log_prob: f64) -> Result<Self> {
        if length == 0 {
            return Err(Error::Metric("output length must be >= 1".into()));
        }
        if !(log_prob <= 0.0) {
            return Err(Error::Metric(format!(
                "log_prob must be <= 0, got {log_prob}"
            )));
        }
        if !proxy_score.is_finite() || !truth_score.is_finite() {
            return Err(Error::Metric("scores must be finite".into()));
        }
        Ok(Self {
            proxy_score,
            truth_score,
            length,
            log_prob,
        })
    }

    /// `ln pi(y|x) / |y|`, the log of the length-normalized probability.
    pub fn normalized_log_prob(&self) -> f64 {
        self.log_prob / f64::from(self.length)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPreferenceExample")]
pub struct PreferenceExample {
    pub example_id: String,
    pub preferred: OutputRecord,
    pub dispreferred: Vec<OutputRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPreferenceExample {
    example_id: String,
    preferred: OutputRecord,
    dispreferred: Vec<OutputRecord>,
}

impl TryFrom<RawPreferenceExample> for PreferenceExample {
    type Error = Error;

    fn try_from(r: RawPreferenceExample) -> Result<Self> {
        PreferenceExample::new(r.example_id, r.preferred, r.dispreferred)
    }
}

impl PreferenceExample {
    /// Requires `K >= 1` and a preferred ground-truth score strictly above
    /// every dispreferred one.
    pub fn new(
        example_id: impl Into<String>,
        preferred: OutputRecord,
        dispreferred: Vec<OutputRecord>,
    ) -> Result<Self> {
        let example_id = example_id.into();
        if dispreferred.is_empty() {
            return Err(Error::Metric(format!(
                "example {example_id}: needs at least one dispreferred output"
            )));
        }
        let worst = max_of(dispreferred.iter().map(|o| o.truth_score));
        if !(preferred.truth_score > worst) {
            return Err(Error::Metric(format!(
                "example {example_id}: preferred ground-truth score {} does not exceed dispreferred {worst}",
                preferred.truth_score
            )));
        }
        Ok(Self {
            example_id,
            preferred,
            dispreferred,
        })
    }

    pub fn max_dispreferred_proxy(&self) -> f64 {
        max_of(self.dispreferred.iter().map(|o| o.proxy_score))
    }

    /// `1[max_k r_P(y-_k) < r_P(y+)]`.
    pub fn ranked_correctly(&self) -> bool {
        self.max_dispreferred_proxy() < self.preferred.proxy_score
    }

    /// `1[max_k r_P(y-_k) < max{r_P(y+), v_bar}]`.
    pub fn harmless(&self, v_bar: f64) -> bool {
        self.max_dispreferred_proxy() < self.preferred.proxy_score.max(v_bar)
    }

    /// Log of the unnormalized example weight: sum of length-normalized
    /// log-probabilities of all its outputs.
    pub fn log_weight(&self) -> f64 {
        std::iter::once(&self.preferred)
            .chain(&self.dispreferred)
            .map(OutputRecord::normalized_log_prob)
            .sum()
    }
}

fn max_of(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceDataset {
    examples: Vec<PreferenceExample>,
}

impl PreferenceDataset {
    pub fn new(examples: Vec<PreferenceExample>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Metric("dataset is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &examples {
            if !seen.insert(e.example_id.as_str()) {
                return Err(Error::Metric(format!(
                    "duplicate example id {}",
                    e.example_id
                )));
            }
        }
        Ok(Self { examples })
    }

    pub fn examples(&self) -> &[PreferenceExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Estimate `V_bar_P(x; theta)` of the expected proxy reward for one prompt.
/// `v_bar = -inf` is accepted and turns harm-aware accuracy into plain
/// accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub example_id: String,
    pub v_bar: f64,
    pub n_samples: u32,
}

fn lookup<'a>(
    dataset: &PreferenceDataset,
    values: &'a [ValueEstimate],
) -> Result<Vec<&'a ValueEstimate>> {
    let by_id: HashMap<&str, &ValueEstimate> =
        values.iter().map(|v| (v.example_id.as_str(), v)).collect();
    dataset
        .examples
        .iter()
        .map(|e| {
            by_id.get(e.example_id.as_str()).copied().ok_or_else(|| {
                Error::Metric(format!("no value estimate for example {}", e.example_id))
            })
        })
        .collect()
}

fn mean_of(indicators: impl Iterator<Item = bool>, n: usize) -> f64 {
    indicators.filter(|&b| b).count() as f64 / n as f64
}

/// Ranking accuracy: the fraction of examples whose preferred output the
/// proxy scores strictly above every dispreferred output.
pub fn acc(dataset: &PreferenceDataset) -> Result<f64> {
    Ok(mean_of(
        dataset
            .examples
            .iter()
            .map(PreferenceExample::ranked_correctly),
        dataset.len(),
    ))
}

/// Harm-aware ranking accuracy.
pub fn hacc(dataset: &PreferenceDataset, values: &[ValueEstimate]) -> Result<f64> {
    let v = lookup(dataset, values)?;
    Ok(mean_of(
        dataset
            .examples
            .iter()
            .zip(v)
            .map(|(e, v)| e.harmless(v.v_bar)),
        dataset.len(),
    ))
}

/// Normalized example weights `w_i ∝ prod over outputs of pi(y)^{1/|y|}`,
/// computed by log-sum-exp.
pub fn example_weights(dataset: &PreferenceDataset) -> Result<Vec<f64>> {
    let logs: Vec<f64> = dataset
        .examples
        .iter()
        .map(PreferenceExample::log_weight)
        .collect();
    let max = max_of(logs.iter().copied());
    if !max.is_finite() {
        return Err(Error::Metric(
            "every example weight is zero; log-probabilities must be finite".into(),
        ));
    }
    let unnormalized: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnormalized.iter().sum();
    Ok(unnormalized.into_iter().map(|w| w / total).collect())
}

/// Acc-W (`harm_aware = false`) or HAcc-W (`harm_aware = true`, which needs
/// value estimates).
pub fn weighted_variant(
    dataset: &PreferenceDataset,
    values: Option<&[ValueEstimate]>,
    harm_aware: bool,
) -> Result<f64> {
    let weights = example_weights(dataset)?;
    let indicators: Vec<bool> = if harm_aware {
        let values = values
            .ok_or_else(|| Error::Metric("harm-aware weighting needs value estimates".into()))?;
        let v = lookup(dataset, values)?;
        dataset
            .examples
            .iter()
            .zip(v)
            .map(|(e, v)| e.harmless(v.v_bar))
            .collect()
    } else {
        dataset
            .examples
            .iter()
            .map(PreferenceExample::ranked_correctly)
            .collect()
    };
    Ok(weights
        .iter()
        .zip(indicators)
        .map(|(w, hit)| if hit { *w } else { 0.0 })
        .sum())
}

/// Source of proxy scores for sampled outputs of one prompt.
pub trait OutputSampler {
    fn sample_score<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;
}

/// Outputs with fixed probabilities and proxy scores.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalSampler {
    cumulative: Vec<f64>,
    scores: Vec<f64>,
}

impl CategoricalSampler {
    pub fn new(probs: &[f64], scores: &[f64]) -> Result<Self> {
        if probs.len() != scores.len() || probs.is_empty() {
            return Err(Error::Metric(
                "probabilities and scores must have equal nonzero length".into(),
            ));
        }
        crate::policy::validate_probs(probs, false)?;
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            cumulative,
            scores: scores.to_vec(),
        })
    }
}

impl OutputSampler for CategoricalSampler {
    fn sample_score<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let i = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.scores.len() - 1);
        self.scores[i]
    }
}

/// Mean proxy score over `n_samples` draws from a generator seeded with
/// `seed`.
pub fn estimate_value<S: OutputSampler>(
    sampler: &S,
    example_id: impl Into<String>,
    n_samples: u32,
    seed: u64,
) -> Result<ValueEstimate> {
    if n_samples == 0 {
        return Err(Error::Metric("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // running mean: exact when every sample is equal
    let mut mean = 0.0;
    for k in 1..=n_samples {
        mean += (sampler.sample_score(&mut rng) - mean) / f64::from(k);
    }
    Ok(ValueEstimate {
        example_id: example_id.into(),
        v_bar: mean,
        n_samples,
    })
}

/// Ranks starting at 1, ties sharing the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Metric(format!(
            "need two lists of equal length >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Metric("values must be finite".into()));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric(
            "Spearman correlation is undefined for a constant input".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `100 (R_best - R_chosen) / R_best`.
pub fn regret(reward_increases: &[f64], chosen_index: usize) -> Result<f64> {
    let chosen = *reward_increases
        .get(chosen_index)
        .ok_or(Error::IndexOutOfRange {
            index: chosen_index,
            len: reward_increases.len(),
        })?;
    let best = max_of(reward_increases.iter().copied());
    if !(best > 0.0) {
        return Err(Error::Metric(format!(
            "regret needs a positive best reward increase, got {best}"
        )));
    }
    Ok(100.0 * (best - chosen) / best)
}
