//! Fixtures shared by the benchmarks.

use rewardlab_core::{
    FeatureSet, OutputRecord, PolicyParams, PreferenceDataset, PreferenceExample, ValueEstimate,
};

/// `n` outputs in `d` dimensions with deterministic, well-spread features.
pub fn features(n: usize, d: usize) -> FeatureSet {
    let vectors = (0..n)
        .map(|i| {
            (0..d)
                .map(|k| ((i * 7 + k * 3) % 11) as f64 / 11.0 - 0.45)
                .collect()
        })
        .collect();
    FeatureSet::new(vectors).expect("nonzero features")
}

pub fn params(d: usize) -> PolicyParams {
    PolicyParams::new((0..d).map(|k| 0.1 * k as f64 - 0.2).collect()).expect("finite")
}

pub fn rewards(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 / n as f64) * 2.0 - 1.0).collect()
}

/// `n` examples with three dispreferred outputs each, plus value estimates.
pub fn dataset(n: usize) -> (PreferenceDataset, Vec<ValueEstimate>) {
    let record = |score: f64, truth: f64, i: usize| {
        OutputRecord::new(score, truth, 1 + (i % 30) as u32, -((i % 17) as f64) - 0.5)
            .expect("valid")
    };
    let examples = (0..n)
        .map(|i| {
            let s = (i % 13) as f64 / 13.0;
            let dis = (1..=3)
                .map(|k| record(s - 0.1 * k as f64 + 0.15, 0.0, i + k))
                .collect();
            PreferenceExample::new(format!("e{i}"), record(s, 1.0, i), dis).expect("valid")
        })
        .collect();
    let values = (0..n)
        .map(|i| ValueEstimate {
            example_id: format!("e{i}"),
            v_bar: 0.3,
            n_samples: 10,
        })
        .collect();
    (PreferenceDataset::new(examples).expect("nonempty"), values)
}
