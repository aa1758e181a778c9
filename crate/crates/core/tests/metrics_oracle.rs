//! Ranking metrics against a separate per-example enumerator.

use proptest::prelude::*;
use rewardlab_core::{
    acc, hacc, weighted_variant, OutputRecord, PreferenceDataset, PreferenceExample, ValueEstimate,
};

#[derive(Clone, Debug)]
struct Case {
    /// (preferred proxy, dispreferred proxies, per-output (len, log_prob))
    examples: Vec<(f64, Vec<f64>, Vec<(u32, f64)>)>,
    values: Vec<f64>,
}

fn case_strategy() -> impl Strategy<Value = Case> {
    // proxy scores on a coarse grid so ties occur often
    let score = (-8i32..=8).prop_map(|k| f64::from(k) / 4.0);
    let output = (1u32..40, -60.0f64..0.0);
    prop::collection::vec(
        (
            score.clone(),
            prop::collection::vec((score.clone(), output.clone()), 1..=4),
            output,
        ),
        1..=20,
    )
    .prop_flat_map(move |raw| {
        let n = raw.len();
        let values = prop::collection::vec((-10i32..=10).prop_map(|k| f64::from(k) / 4.0), n);
        (Just(raw), values)
    })
    .prop_map(|(raw, values)| Case {
        examples: raw
            .into_iter()
            .map(|(pref, dis, pref_out)| {
                let mut outputs = vec![pref_out];
                outputs.extend(dis.iter().map(|d| d.1));
                (pref, dis.into_iter().map(|d| d.0).collect(), outputs)
            })
            .collect(),
        values,
    })
}

fn build(case: &Case, map: impl Fn(f64) -> f64) -> (PreferenceDataset, Vec<ValueEstimate>) {
    let examples = case
        .examples
        .iter()
        .enumerate()
        .map(|(i, (pref, dis, outs))| {
            let preferred = OutputRecord::new(map(*pref), 1.0, outs[0].0, outs[0].1).unwrap();
            let dispreferred = dis
                .iter()
                .zip(&outs[1..])
                .map(|(d, o)| OutputRecord::new(map(*d), 0.0, o.0, o.1).unwrap())
                .collect();
            PreferenceExample::new(format!("ex{i}"), preferred, dispreferred).unwrap()
        })
        .collect();
    let values = case
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| ValueEstimate {
            example_id: format!("ex{i}"),
            v_bar: map(*v),
            n_samples: 10,
        })
        .collect();
    (PreferenceDataset::new(examples).unwrap(), values)
}

/// Counts by explicit pairwise comparison; weights by direct products of
/// `pi^{1/|y|}` normalized by their sum.
fn brute_force(case: &Case, v_bars: &[f64]) -> [f64; 4] {
    let n = case.examples.len() as f64;
    let mut weights = Vec::new();
    let (mut a, mut h) = (Vec::new(), Vec::new());
    for ((pref, dis, outs), v) in case.examples.iter().zip(v_bars) {
        let mut correct = true;
        let mut harmless = true;
        for d in dis {
            if !(*d < *pref) {
                correct = false;
            }
            if !(*d < *pref || *d < *v) {
                harmless = false;
            }
        }
        a.push(correct);
        h.push(harmless);
        let w: f64 = outs
            .iter()
            .map(|(len, lp)| (lp / f64::from(*len)).exp())
            .product();
        weights.push(w);
    }
    let total: f64 = weights.iter().sum();
    let count = |xs: &[bool]| xs.iter().filter(|b| **b).count() as f64 / n;
    let weighted = |xs: &[bool]| {
        xs.iter()
            .zip(&weights)
            .filter(|(b, _)| **b)
            .map(|(_, w)| w / total)
            .sum::<f64>()
    };
    [count(&a), weighted(&a), count(&h), weighted(&h)]
}

fn metrics(ds: &PreferenceDataset, values: &[ValueEstimate]) -> [f64; 4] {
    [
        acc(ds).unwrap(),
        weighted_variant(ds, None, false).unwrap(),
        hacc(ds, values).unwrap(),
        weighted_variant(ds, Some(values), true).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_brute_force(case in case_strategy()) {
        let (ds, values) = build(&case, |x| x);
        let got = metrics(&ds, &values);
        let want = brute_force(&case, &case.values);
        for k in 0..4 {
            prop_assert!((got[k] - want[k]).abs() <= 1e-12, "metric {k}: {} vs {}", got[k], want[k]);
        }
        prop_assert!(got[2] >= got[0]);
        prop_assert!(got[3] >= got[1] - 1e-15);
    }

    #[test]
    fn invariant_under_increasing_maps(case in case_strategy()) {
        let (ds, values) = build(&case, |x| x);
        let base = metrics(&ds, &values);
        let maps: [fn(f64) -> f64; 2] = [f64::exp, |x| 3.0 * x - 0.7];
        for map in maps {
            let (ds2, values2) = build(&case, map);
            prop_assert_eq!(acc(&ds2).unwrap(), base[0]);
            prop_assert_eq!(hacc(&ds2, &values2).unwrap(), base[2]);
        }
    }

    #[test]
    fn hacc_with_no_forgiveness_is_acc(case in case_strategy()) {
        let (ds, _) = build(&case, |x| x);
        let values: Vec<ValueEstimate> = ds
            .examples()
            .iter()
            .map(|e| ValueEstimate { example_id: e.example_id.clone(), v_bar: f64::NEG_INFINITY, n_samples: 1 })
            .collect();
        prop_assert_eq!(hacc(&ds, &values).unwrap(), acc(&ds).unwrap());
        prop_assert_eq!(
            weighted_variant(&ds, Some(&values), true).unwrap(),
            weighted_variant(&ds, None, false).unwrap()
        );
    }

    #[test]
    fn permutation_invariant(case in case_strategy(), rot in 0usize..20) {
        let (ds, values) = build(&case, |x| x);
        let mut examples = ds.examples().to_vec();
        let k = rot % examples.len();
        examples.rotate_left(k);
        examples.reverse();
        let shuffled = PreferenceDataset::new(examples).unwrap();
        let a = metrics(&ds, &values);
        let b = metrics(&shuffled, &values);
        prop_assert_eq!(a[0], b[0]);
        prop_assert_eq!(a[2], b[2]);
        prop_assert!((a[1] - b[1]).abs() <= 1e-12);
        prop_assert!((a[3] - b[3]).abs() <= 1e-12);
    }

    #[test]
    fn uniform_weights_reduce_to_unweighted(case in case_strategy()) {
        let mut uniform = case.clone();
        for ex in &mut uniform.examples {
            for o in &mut ex.2 {
                *o = (1, -1.0);
            }
            // equal output counts give equal weights
            ex.1.truncate(1);
            ex.2.truncate(2);
        }
        let (ds, values) = build(&uniform, |x| x);
        let m = metrics(&ds, &values);
        prop_assert!((m[1] - m[0]).abs() <= 1e-12);
        prop_assert!((m[3] - m[2]).abs() <= 1e-12);
    }
}
