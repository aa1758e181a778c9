//! Bound calculators against a double-double re-evaluation of the same
//! formulas written as plain products (no logarithms).

use rewardlab_core::{
    build_error_scenario, build_fig2_scenario, build_geometry_scenario, build_neg_fail_scenario,
    check_assumptions, thm_a1_bounds, thm_a2_neg_bounds, thm_a3_pos_bounds, with_assumption_window,
    ErrorCategory, ErrorKnobs, Geometry, RewardChoice, Scenario, Theorem,
};
use twofloat::TwoFloat;

const REL_TOL: f64 = 1e-10;

fn tf(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

fn frac(a: f64, b: f64) -> TwoFloat {
    TwoFloat::new_div(a, b)
}

fn pow(x: TwoFloat, e: TwoFloat) -> TwoFloat {
    x.powf(e)
}

fn min2(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    if a < b {
        a
    } else {
        b
    }
}

/// Relative error of `exp(ln_value)` against `oracle`.
fn rel_err_ln(ln_value: f64, oracle: TwoFloat) -> f64 {
    let diff = tf(ln_value) - oracle.ln();
    f64::from(diff.exp_m1()).abs()
}

fn rel_err(value: f64, oracle: TwoFloat) -> f64 {
    f64::from((tf(value) - oracle) / oracle).abs()
}

struct Raw {
    r_star: f64,
    r_med: f64,
    r_bad: f64,
    pi_star: f64,
    pi_med: f64,
}

fn raw(s: &Scenario, over: RewardChoice) -> Raw {
    let spec = s.structure();
    let r = s.rewards().get(over);
    let pi = s.initial_probs();
    Raw {
        r_star: r[spec.star_index],
        r_med: r[spec.med_index],
        r_bad: r[spec.bad_indices[0]],
        pi_star: pi[spec.star_index],
        pi_med: pi[spec.med_index],
    }
}

fn value(s: &Scenario, choice: RewardChoice) -> TwoFloat {
    let mut v = tf(0.0);
    for (p, r) in s.initial_probs().iter().zip(s.rewards().get(choice)) {
        v += TwoFloat::new_mul(*p, *r);
    }
    v
}

fn one_minus_exp_neg(x: TwoFloat) -> TwoFloat {
    tf(1.0) - (-x).exp()
}

fn a1_oracle(s: &Scenario, eps: f64) -> (TwoFloat, TwoFloat) {
    let over = s.structure_over();
    let g = raw(s, over);
    let d1 = tf(g.r_star) - g.r_med;
    let d2 = tf(g.r_med) - g.r_bad;
    let m = min2(
        tf(1.0),
        tf(0.05) * pow(tf(g.r_med), frac(2.0, 7.0)) / (d1 + d2),
    );
    let sqrt2 = tf(2.0).sqrt();
    let lower = tf(2.0)
        * sqrt2
        * pow(m, frac(14.0, 13.0))
        * d1
        * g.r_med
        * one_minus_exp_neg(sqrt2 * (d1 - eps))
        / ((d1 + d2) * (tf(1.0) + tf(8.0) * d1))
        * pow(tf(g.pi_star), -frac(14.0, 13.0));
    let fast = over.other();
    let r_fast_star = s.rewards().get(fast)[s.structure().star_index];
    let r_g_star = s.rewards().ground_truth()[s.structure().star_index];
    let gap = tf(r_fast_star) - value(s, fast);
    let upper = (tf(r_g_star) + 1.0) * (tf(r_g_star) + 1.0) / (tf(eps) * eps * gap) / g.pi_star;
    (lower, upper)
}

fn a1_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    for frac in [0.5, 0.1, 1e-3] {
        let base = build_fig2_scenario(0.05, true).unwrap();
        out.push(with_assumption_window(&base, Theorem::ThmA1, frac).unwrap());
    }
    out
}

#[test]
fn thm_a1_matches_double_double() {
    for s in a1_scenarios() {
        for eps in [0.01, 0.1, 0.19] {
            let report = thm_a1_bounds(&s, eps).unwrap();
            let (lower, upper) = a1_oracle(&s, eps);
            let e1 = rel_err_ln(report.ln_lower_bound_t_star.unwrap(), lower);
            let e2 = rel_err_ln(report.ln_upper_bound_t_nomed.unwrap(), upper);
            assert!(e1 < REL_TOL, "lower bound rel err {e1:e}");
            assert!(e2 < REL_TOL, "upper bound rel err {e2:e}");
            assert!(rel_err(report.lower_bound_t_star.unwrap(), lower) < REL_TOL);
        }
    }
}

#[test]
fn thm_a1_constants_match_double_double() {
    for s in a1_scenarios() {
        let report = check_assumptions(&s, Theorem::ThmA1).unwrap();
        let g = raw(&s, RewardChoice::GroundTruth);
        let d1 = tf(g.r_star) - g.r_med;
        let d2 = tf(g.r_med) - g.r_bad;
        let m = min2(
            tf(1.0),
            tf(0.05) * pow(tf(g.r_med), frac(2.0, 7.0)) / (d1 + d2),
        );
        let inner = min2(
            min2(
                tf(0.01),
                pow(tf(21.0) / (tf(1100.0) * (d1 + d2)), frac(7.0, 3.0)),
            ),
            d2 * d2,
        );
        let cap = m * pow(inner, frac(13.0, 14.0));
        let gamma = pow(tf(g.pi_star) / m, frac(14.0, 13.0));
        let ybad = {
            let first =
                tf(2.0) * pow(tf(g.pi_star), frac(7.0, 13.0)) / (d2 * pow(m, frac(7.0, 13.0)));
            let second = tf(0.05) * g.r_med;
            if first > second {
                first
            } else {
                second
            }
        };
        assert!(rel_err(report.constant("M").unwrap(), m) < REL_TOL);
        assert!(rel_err(report.constant("star_cap").unwrap(), cap) < REL_TOL);
        assert!(rel_err(report.constant("gamma").unwrap(), gamma) < REL_TOL);
        assert!(rel_err(report.constant("ybad_lower").unwrap(), ybad) < REL_TOL);
        assert!(rel_err_ln(report.constant("ln_gamma").unwrap(), gamma) < REL_TOL);
    }
}

/// Halving `pi_0(y*)` scales the orthonormal lower bound by `2^{14/13}`
/// and the upper bound by 2 (the other inputs move with the window, so
/// the comparison is made on the formula at fixed constants).
#[test]
fn thm_a1_scaling_in_pi_star() {
    use rewardlab_core::theory::formulas::{ln_nomed_upper, ln_thm_a1_lower};
    let (m, d1, d2, r_med, eps) = (0.02, 0.2, 1.8, 0.8, 0.1);
    for pi in [1e-3, 1e-6, 1e-9, 1e-12] {
        let ratio = (ln_thm_a1_lower(m, d1, d2, r_med, eps, pi / 2.0)
            - ln_thm_a1_lower(m, d1, d2, r_med, eps, pi))
        .exp();
        assert!((ratio / 2f64.powf(14.0 / 13.0) - 1.0).abs() < 1e-12);
        let ratio = (ln_nomed_upper(1.0, eps, 0.5, 1.0, pi / 2.0)
            - ln_nomed_upper(1.0, eps, 0.5, 1.0, pi))
        .exp();
        assert!((ratio - 2.0).abs() < 1e-12);
    }
}

fn low_proxy_window(kind: Geometry, theorem: Theorem) -> Scenario {
    let base = build_geometry_scenario(kind).unwrap();
    let s = with_assumption_window(&base, theorem, 0.5).unwrap();
    build_error_scenario(ErrorCategory::Beneficial1, &s, &ErrorKnobs::default()).unwrap()
}

fn a2_scenario() -> Scenario {
    low_proxy_window(Geometry::Negative, Theorem::ThmA2Neg)
}

#[test]
fn thm_a2_matches_double_double() {
    let s = a2_scenario();
    let report = check_assumptions(&s, Theorem::ThmA2Neg).unwrap();
    assert!(
        report.overall,
        "{:#?}",
        report.failed_items().collect::<Vec<_>>()
    );
    let spec = s.structure();
    let f = s.features();
    let g = raw(&s, RewardChoice::GroundTruth);
    let (star, med) = (spec.star_index, spec.med_index);
    let star_sq = tf(f.norm_sq(star));
    let med_sq = tf(f.norm_sq(med));
    let sv = tf(f.inner(star, med));
    let b = tf(f.max_norm());
    let d1 = tf(g.r_star) - g.r_med;
    let d2 = tf(g.r_med) - g.r_bad;
    let m_prime = min2(
        tf(1.0),
        med_sq * pow(tf(g.r_med), frac(2.0, 7.0)) / (tf(40.0) * b * b * (d1 + d2)),
    );
    let alpha = -sv / (tf(26.0) * (med_sq - tf(0.5) * sv));
    let a_star = tf(g.r_star) - value(&s, RewardChoice::GroundTruth);
    let k = pow(tf(26.0) / (tf(g.r_med) * g.r_med), tf(13.0) * alpha / 7.0)
        * (tf(1.0) + med_sq * g.pi_med * g.pi_med / (tf(8.0) * (star_sq - sv) * a_star));
    for eps in [0.05, 0.1, 0.15] {
        let bounds = thm_a2_neg_bounds(&s, eps).unwrap();
        let exponent = frac(14.0, 13.0) + alpha;
        let lower = tf(g.r_med) * pow(m_prime, exponent) * one_minus_exp_neg(tf(2.0) * (d1 - eps))
            / (tf(4.0) * b * b * (d1 + d2) * k)
            * pow(tf(g.pi_star), -exponent);
        let r_p = s.rewards().proxy();
        let gap = tf(r_p[star]) - value(&s, RewardChoice::Proxy);
        let upper = (tf(g.r_star) + 1.0) * (tf(g.r_star) + 1.0)
            / (tf(eps) * eps * gap * star_sq)
            / g.pi_star;
        let e1 = rel_err_ln(bounds.ln_lower_bound_t_star.unwrap(), lower);
        let e2 = rel_err_ln(bounds.ln_upper_bound_t_nomed.unwrap(), upper);
        assert!(e1 < REL_TOL, "lower {e1:e}");
        assert!(e2 < REL_TOL, "upper {e2:e}");
        assert!(rel_err(bounds.constants["K"], k) < REL_TOL);
        assert!(rel_err(bounds.constants["alpha"], alpha) < REL_TOL);
        assert!((bounds.exponent + f64::from(exponent)).abs() < 1e-15);
    }
}

fn a3_scenario() -> Scenario {
    low_proxy_window(Geometry::Positive, Theorem::ThmA3Pos)
}

#[test]
fn thm_a3_matches_double_double() {
    let s = a3_scenario();
    let spec = s.structure();
    let f = s.features();
    let (star, med) = (spec.star_index, spec.med_index);
    let r_g = s.rewards().ground_truth();
    let r_p = s.rewards().proxy();
    let pi = s.initial_probs();
    let star_sq = tf(f.norm_sq(star));
    let med_sq = tf(f.norm_sq(med));
    let sv = tf(f.inner(star, med));
    let d1 = tf(r_g[star]) - r_g[med];
    let v_p = value(&s, RewardChoice::Proxy);
    let u = tf(pi[star]) * (tf(r_p[star]) - v_p);
    let w = tf(pi[med]) * (tf(r_p[med]) - v_p);
    let rhs = (u * star_sq - w * med_sq) / (u - w);
    for eps in [0.05, 0.1] {
        let bounds = thm_a3_pos_bounds(&s, eps).unwrap();
        let diff_sq = star_sq + med_sq - tf(2.0) * sv;
        let upper = (tf(r_g[star]) + 1.0) * (tf(r_g[star]) + 1.0)
            / (tf(eps) * eps * d1 * diff_sq)
            / pi[star];
        let e = rel_err_ln(bounds.constants["ln_upper_bound_t_star"], upper);
        assert!(e < REL_TOL, "upper {e:e}");
        let rhs_err = f64::from(tf(bounds.constants["case2_rhs"]) - rhs).abs();
        assert!(rhs_err <= REL_TOL * f64::from(rhs).abs().max(1.0));
    }
}

#[test]
fn neg_fail_constants_match_double_double() {
    let s = build_neg_fail_scenario(0.5, 0.5, 3.0, [1.0, 0.8, -1.0]).unwrap();
    let report = check_assumptions(&s, Theorem::PropNegFail).unwrap();
    let g = raw(&s, RewardChoice::GroundTruth);
    let pi_bad = s.initial_probs()[s.structure().bad_indices[0]];
    let v0 = value(&s, RewardChoice::GroundTruth);
    let zeta = (tf(g.pi_med).ln() - tf(pi_bad).ln()) / (tf(g.pi_med).ln() - tf(g.pi_star).ln())
        * (v0 - g.r_bad)
        / (tf(g.r_star) - v0);
    assert!(rel_err(report.constant("zeta").unwrap(), zeta) < REL_TOL);
}

#[test]
fn double_double_sanity() {
    let x = tf(2.0).ln().exp();
    let y = pow(tf(8.0), frac(1.0, 3.0));
    // transcendental functions are only accurate to about 1e-14, which is
    // still four orders below the tolerance used above
    assert!(f64::from(x - 2.0).abs() < 1e-13);
    assert!(f64::from(y - 2.0).abs() < 1e-13);
}
