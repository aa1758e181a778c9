//! Closed-form time bounds, thresholds and constants.
//!
//! Bounds are evaluated as logarithms: the interesting regime has
//! `pi_0(y*)` many orders of magnitude below one, where products of powers
//! lose precision or leave the range of `f64`. The [`formulas`] submodule
//! holds the raw expressions; the public calculators first check the
//! theorem's hypotheses and refuse to evaluate when they fail.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::RewardChoice;
use crate::scenarios::{check_assumptions, AssumptionReport, Scenario, Theorem};

pub mod formulas {
    //! Raw constants and bounds; natural-log forms are prefixed `ln_`.

    const SEVEN_THIRTEENTHS: f64 = 7.0 / 13.0;
    const FOURTEEN_THIRTEENTHS: f64 = 14.0 / 13.0;
    const THIRTEEN_FOURTEENTHS: f64 = 13.0 / 14.0;

    /// `ln(1 - e^{-x})` for `x > 0`.
    fn ln_one_minus_exp_neg(x: f64) -> f64 {
        (-(-x).exp_m1()).ln()
    }

    /// `M = min{1, 0.05 r_med^{2/7} / (D1 + D2)}`.
    pub fn a2_m(d1: f64, d2: f64, r_med: f64) -> f64 {
        (0.05 * r_med.powf(2.0 / 7.0) / (d1 + d2)).min(1.0)
    }

    /// `ln(M min{0.01, (21 / (1100 (D1 + D2)))^{7/3}, D2^2}^{13/14})`.
    pub fn a2_ln_star_cap(d1: f64, d2: f64, r_med: f64) -> f64 {
        let inner = 0.01f64
            .ln()
            .min(7.0 / 3.0 * (21.0 / (1100.0 * (d1 + d2))).ln())
            .min(2.0 * d2.ln());
        a2_m(d1, d2, r_med).ln() + THIRTEEN_FOURTEENTHS * inner
    }

    /// `M' = min{1, |phi(y_med)|^2 r_med^{2/7} / (40 B^2 (D1 + D2))}`.
    pub fn a3_m_prime(d1: f64, d2: f64, r_med: f64, med_sq: f64, b: f64) -> f64 {
        (med_sq * r_med.powf(2.0 / 7.0) / (40.0 * b * b * (d1 + d2))).min(1.0)
    }

    /// `ln(M' min{0.01, (21 |phi(y_med)|^2 / (1100 B^2 (D1 + D2)))^{7/3}}^{13/14})`,
    /// the first of the two caps on `pi_0(y*)`.
    pub fn a3_ln_star_cap_without_ratio(d1: f64, d2: f64, r_med: f64, med_sq: f64, b: f64) -> f64 {
        let inner = 0.01f64
            .ln()
            .min(7.0 / 3.0 * (21.0 * med_sq / (1100.0 * b * b * (d1 + d2))).ln());
        a3_m_prime(d1, d2, r_med, med_sq, b).ln() + THIRTEEN_FOURTEENTHS * inner
    }

    /// `max{2 pi_0(y*)^{7/13} / (D2 m^{7/13}), 0.05 r_med}`.
    pub fn ybad_lower(pi_star: f64, m: f64, d2: f64, r_med: f64) -> f64 {
        let first = 2.0 * (SEVEN_THIRTEENTHS * (pi_star.ln() - m.ln())).exp() / d2;
        first.max(0.05 * r_med)
    }

    /// `ln gamma` with `gamma = (pi_0(y*) / m)^{14/13}`.
    pub fn ln_gamma(pi_star: f64, m: f64) -> f64 {
        FOURTEEN_THIRTEENTHS * (pi_star.ln() - m.ln())
    }

    /// `alpha = -s / (26 (|phi(y_med)|^2 - s / 2))`.
    pub fn alpha(s: f64, med_sq: f64) -> f64 {
        -s / (26.0 * (med_sq - 0.5 * s))
    }

    /// `h(s) = (|phi(y_med)|^2 - s) / (7 (|phi(y_med)|^2 - s / 2))`.
    pub fn h(s: f64, med_sq: f64) -> f64 {
        (med_sq - s) / (7.0 * (med_sq - 0.5 * s))
    }

    /// `(26 / r_med^2)^{13 alpha / 7}`.
    pub fn k_prefactor(alpha: f64, r_med: f64) -> f64 {
        (13.0 * alpha / 7.0 * (26.0 / (r_med * r_med)).ln()).exp()
    }

    /// `K = (26 / r_med^2)^{13 alpha / 7} (1 + |phi(y_med)|^2 pi_0(y_med)^2 / (8 (|phi(y*)|^2 - s) A(y*; theta_0)))`.
    pub fn k_constant(
        alpha: f64,
        r_med: f64,
        med_sq: f64,
        star_sq: f64,
        s: f64,
        pi_med: f64,
        a_star: f64,
    ) -> f64 {
        k_prefactor(alpha, r_med)
            * (1.0 + med_sq * pi_med * pi_med / (8.0 * (star_sq - s) * a_star))
    }

    /// The ratio `zeta` of the failure proposition.
    pub fn zeta(pi_med: f64, pi_bad: f64, pi_star: f64, v0: f64, r_bad: f64, r_star: f64) -> f64 {
        (pi_med.ln() - pi_bad.ln()) / (pi_med.ln() - pi_star.ln()) * (v0 - r_bad) / (r_star - v0)
    }

    /// Log of the lower bound on `t*` for orthonormal features.
    pub fn ln_thm_a1_lower(m: f64, d1: f64, d2: f64, r_med: f64, eps: f64, pi_star: f64) -> f64 {
        (2.0 * std::f64::consts::SQRT_2).ln()
            + FOURTEEN_THIRTEENTHS * m.ln()
            + d1.ln()
            + r_med.ln()
            + ln_one_minus_exp_neg(std::f64::consts::SQRT_2 * (d1 - eps))
            - (d1 + d2).ln()
            - (1.0 + 8.0 * d1).ln()
            - FOURTEEN_THIRTEENTHS * pi_star.ln()
    }

    /// Log of `(r*+1)^2 / (eps^2 (r_fast(y*) - V_fast(theta_0)) |phi(y*)|^2) / pi_0(y*)`;
    /// `star_sq = 1` gives the orthonormal bound.
    pub fn ln_nomed_upper(r_star: f64, eps: f64, gap0: f64, star_sq: f64, pi_star: f64) -> f64 {
        2.0 * (r_star + 1.0).ln() - 2.0 * eps.ln() - gap0.ln() - star_sq.ln() - pi_star.ln()
    }

    /// Log of the lower bound on `t*` for a negative inner product.
    #[allow(clippy::too_many_arguments)]
    pub fn ln_thm_a2_lower(
        r_med: f64,
        m_prime: f64,
        alpha: f64,
        d1: f64,
        d2: f64,
        eps: f64,
        b: f64,
        k: f64,
        pi_star: f64,
    ) -> f64 {
        let exponent = FOURTEEN_THIRTEENTHS + alpha;
        r_med.ln() + exponent * m_prime.ln() + ln_one_minus_exp_neg(2.0 * (d1 - eps))
            - 4f64.ln()
            - 2.0 * b.ln()
            - (d1 + d2).ln()
            - k.ln()
            - exponent * pi_star.ln()
    }

    /// Log of the upper bound on `t*` for a positive inner product.
    pub fn ln_thm_a3_upper(r_star: f64, eps: f64, d1: f64, diff_sq: f64, pi_star: f64) -> f64 {
        2.0 * (r_star + 1.0).ln() - 2.0 * eps.ln() - d1.ln() - diff_sq.ln() - pi_star.ln()
    }

    /// Right-hand side of the inner-product condition under which maximizing
    /// a proxy with a low-reward mediocre output fails.
    pub fn thm_a3_case2_rhs(
        pi_star: f64,
        a_star: f64,
        star_sq: f64,
        pi_med: f64,
        a_med: f64,
        med_sq: f64,
    ) -> f64 {
        let (u, v) = (pi_star * a_star, pi_med * a_med);
        (u * star_sq - v * med_sq) / (u - v)
    }
}

/// Numeric bounds of one theorem for one scenario and `epsilon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub epsilon: f64,
    /// Objective of the run whose hitting time is bounded below (or above,
    /// for the positive inner product theorem).
    pub slow_objective: RewardChoice,
    /// Objective of the run whose hitting time is bounded above.
    pub fast_objective: RewardChoice,
    pub lower_bound_t_star: Option<f64>,
    pub ln_lower_bound_t_star: Option<f64>,
    pub upper_bound_t_star: Option<f64>,
    pub upper_bound_t_nomed: Option<f64>,
    pub ln_upper_bound_t_nomed: Option<f64>,
    /// Lower bound on `pi(y*)` after the fast run's bound time.
    pub terminal_prob_bound: Option<f64>,
    /// Whether the inner-product condition for proxy failure holds.
    pub case2_condition: Option<bool>,
    /// Ceiling on `V_G` under proxy maximization when that condition holds.
    pub value_ceiling: Option<f64>,
    /// Predicted exponent of `pi_0(y*)` in the bound.
    pub exponent: f64,
    pub constants: BTreeMap<String, f64>,
}

impl BoundReport {
    fn new(theorem: Theorem, epsilon: f64, exponent: f64, report: &AssumptionReport) -> Self {
        Self {
            theorem,
            epsilon,
            slow_objective: RewardChoice::GroundTruth,
            fast_objective: RewardChoice::Proxy,
            lower_bound_t_star: None,
            ln_lower_bound_t_star: None,
            upper_bound_t_star: None,
            upper_bound_t_nomed: None,
            ln_upper_bound_t_nomed: None,
            terminal_prob_bound: None,
            case2_condition: None,
            value_ceiling: None,
            exponent,
            constants: report.constants.clone(),
        }
    }
}

fn checked(scenario: &Scenario, theorem: Theorem, epsilon: f64) -> Result<AssumptionReport> {
    let d1 = scenario.structure().delta1;
    if !(epsilon > 0.0 && epsilon < d1) {
        return Err(Error::Parameter(format!(
            "epsilon must lie in (0, {d1}), got {epsilon}"
        )));
    }
    let report = check_assumptions(scenario, theorem)?;
    if !report.overall {
        return Err(Error::AssumptionsFailed(Box::new(report)));
    }
    Ok(report)
}

fn exp_opt(ln: f64) -> Option<f64> {
    let v = ln.exp();
    (v.is_finite() && v > 0.0).then_some(v)
}

/// Bounds for orthonormal features: a lower bound on `t*` when maximizing
/// the structured reward and an upper bound on `t*` when maximizing the
/// other reward. For the harmful corollary (structure over the proxy) the
/// roles of the two reward functions swap.
pub fn thm_a1_bounds(scenario: &Scenario, epsilon: f64) -> Result<BoundReport> {
    let report = checked(scenario, Theorem::ThmA1, epsilon)?;
    let spec = scenario.structure();
    let slow = scenario.structure_over();
    let fast = slow.other();
    let r_s = scenario.rewards().get(slow);
    let (d1, d2) = (spec.delta1, spec.delta2);
    let pi_star = scenario.initial_probs()[spec.star_index];
    let m = report.constant("M").expect("M is computed for thmA1");
    let ln_lower = formulas::ln_thm_a1_lower(m, d1, d2, r_s[spec.med_index], epsilon, pi_star);
    let r_truth_star = scenario.rewards().ground_truth()[spec.star_index];
    let gap0 = scenario.initial_advantage(fast, spec.star_index)?;
    let ln_upper = formulas::ln_nomed_upper(r_truth_star, epsilon, gap0, 1.0, pi_star);

    let mut out = BoundReport::new(Theorem::ThmA1, epsilon, -14.0 / 13.0, &report);
    out.slow_objective = slow;
    out.fast_objective = fast;
    out.ln_lower_bound_t_star = Some(ln_lower);
    out.lower_bound_t_star = exp_opt(ln_lower);
    out.ln_upper_bound_t_nomed = Some(ln_upper);
    out.upper_bound_t_nomed = exp_opt(ln_upper);
    out.terminal_prob_bound = Some(1.0 - epsilon / (d1 + d2));
    Ok(out)
}

/// Bounds for a negative inner product between the optimal and mediocre
/// features.
pub fn thm_a2_neg_bounds(scenario: &Scenario, epsilon: f64) -> Result<BoundReport> {
    let report = checked(scenario, Theorem::ThmA2Neg, epsilon)?;
    let spec = scenario.structure();
    let f = scenario.features();
    let r_g = scenario.rewards().ground_truth();
    let (d1, d2) = (spec.delta1, spec.delta2);
    let pi_star = scenario.initial_probs()[spec.star_index];
    let get = |k: &str| report.constant(k).expect("constant computed for thmA2_neg");
    let (alpha, k, m_prime, b) = (get("alpha"), get("K"), get("M_prime"), get("B"));
    let ln_lower = formulas::ln_thm_a2_lower(
        r_g[spec.med_index],
        m_prime,
        alpha,
        d1,
        d2,
        epsilon,
        b,
        k,
        pi_star,
    );
    let gap0 = scenario.initial_advantage(RewardChoice::Proxy, spec.star_index)?;
    let ln_upper = formulas::ln_nomed_upper(
        r_g[spec.star_index],
        epsilon,
        gap0,
        f.norm_sq(spec.star_index),
        pi_star,
    );
    let mut out = BoundReport::new(Theorem::ThmA2Neg, epsilon, -14.0 / 13.0 - alpha, &report);
    out.ln_lower_bound_t_star = Some(ln_lower);
    out.lower_bound_t_star = exp_opt(ln_lower);
    out.ln_upper_bound_t_nomed = Some(ln_upper);
    out.upper_bound_t_nomed = exp_opt(ln_upper);
    Ok(out)
}

/// Bounds for a positive inner product: an upper bound on `t*` when
/// maximizing the ground truth, and the proxy-failure condition with its
/// ceiling on `V_G`.
pub fn thm_a3_pos_bounds(scenario: &Scenario, epsilon: f64) -> Result<BoundReport> {
    let report = checked(scenario, Theorem::ThmA3Pos, epsilon)?;
    let spec = scenario.structure();
    let f = scenario.features();
    let (star, med) = (spec.star_index, spec.med_index);
    let r_g = scenario.rewards().ground_truth();
    let pi = scenario.initial_probs();
    let s = f.inner(star, med);
    let diff_sq = f.norm_sq(star) + f.norm_sq(med) - 2.0 * s;
    let ln_upper_star =
        formulas::ln_thm_a3_upper(r_g[star], epsilon, spec.delta1, diff_sq, pi[star]);
    let rhs = formulas::thm_a3_case2_rhs(
        pi[star],
        scenario.initial_advantage(RewardChoice::Proxy, star)?,
        f.norm_sq(star),
        pi[med],
        scenario.initial_advantage(RewardChoice::Proxy, med)?,
        f.norm_sq(med),
    );
    let holds = s > rhs;
    let mut out = BoundReport::new(Theorem::ThmA3Pos, epsilon, -1.0, &report);
    out.upper_bound_t_star = exp_opt(ln_upper_star);
    out.constants
        .insert("ln_upper_bound_t_star".into(), ln_upper_star);
    out.constants.insert("case2_rhs".into(), rhs);
    out.case2_condition = Some(holds);
    if holds {
        out.value_ceiling = Some(r_g[star] - spec.delta1 * pi[med]);
    }
    Ok(out)
}

/// `2 eps / (delta_z exp(10 B^2 T))`, the largest initial mass of the
/// disagreement set for which the two trajectories stay `eps`-close in TV
/// up to time `T`. Infinite when the rewards agree on the set.
pub fn prop2_tv_threshold(b: f64, delta_z: f64, epsilon: f64, horizon: f64) -> Result<f64> {
    if !(b > 0.0 && epsilon > 0.0 && horizon >= 0.0 && delta_z >= 0.0) {
        return Err(Error::Parameter(format!(
            "need B > 0, eps > 0, T >= 0, delta_Z >= 0; got B = {b}, eps = {epsilon}, T = {horizon}, delta_Z = {delta_z}"
        )));
    }
    if delta_z == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 * epsilon / delta_z * (-10.0 * b * b * horizon).exp())
}

/// `2 B (D1 + D2) (1 - pi(y_med))` at the given policy.
pub fn gradient_norm_bound(scenario: &Scenario, probs: &[f64]) -> Result<f64> {
    let spec = scenario.structure();
    let pi_med = probs.get(spec.med_index).ok_or(Error::IndexOutOfRange {
        index: spec.med_index,
        len: probs.len(),
    })?;
    Ok(2.0 * scenario.features().max_norm() * (spec.delta1 + spec.delta2) * (1.0 - pi_med))
}

/// Outcome of the negative-inner-product failure check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegFailReport {
    pub conditions: AssumptionReport,
    pub zeta: f64,
    pub c: f64,
    pub c_threshold: f64,
    /// `r_G(y_med)`, which `V_G` never reaches, when every condition holds.
    pub predicted_ceiling: Option<f64>,
}

pub fn prop_neg_fail_check(scenario: &Scenario) -> Result<NegFailReport> {
    let conditions = check_assumptions(scenario, Theorem::PropNegFail)?;
    let get = |k: &str| {
        conditions
            .constant(k)
            .expect("constant computed for prop_neg_fail")
    };
    let spec = scenario.structure();
    let predicted_ceiling = conditions
        .overall
        .then(|| scenario.rewards().ground_truth()[spec.med_index]);
    Ok(NegFailReport {
        zeta: get("zeta"),
        c: get("C"),
        c_threshold: get("C_threshold"),
        predicted_ceiling,
        conditions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{build_fig2_scenario, with_assumption_window};

    #[test]
    fn tv_threshold_examples() {
        let t = prop2_tv_threshold(1.0, 2.0, 0.05, 1.0).unwrap();
        assert!((t - 2.2699964881242427e-6).abs() < 1e-18, "{t:e}");
        assert_eq!(prop2_tv_threshold(1.0, 2.0, 0.05, 0.0).unwrap(), 0.05);
        assert_eq!(
            prop2_tv_threshold(1.0, 0.0, 0.05, 1.0).unwrap(),
            f64::INFINITY
        );
        assert!(prop2_tv_threshold(1.0, 2.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn gradient_bound_arithmetic() {
        let s = build_fig2_scenario(0.05, true).unwrap();
        let b = gradient_norm_bound(&s, &[0.05, 0.5, 0.15, 0.15, 0.15]).unwrap();
        assert!((b - 2.0).abs() < 1e-15);
        assert_eq!(
            gradient_norm_bound(&s, &[0.0, 1.0, 0.0, 0.0, 0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn refuses_outside_assumptions() {
        let s = build_fig2_scenario(0.05, true).unwrap();
        assert!(matches!(
            thm_a1_bounds(&s, 0.1),
            Err(Error::AssumptionsFailed(_))
        ));
    }

    #[test]
    fn epsilon_range() {
        let base = build_fig2_scenario(0.05, true).unwrap();
        let s = with_assumption_window(&base, Theorem::ThmA1, 0.5).unwrap();
        assert!(matches!(thm_a1_bounds(&s, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(thm_a1_bounds(&s, 0.2), Err(Error::Parameter(_))));
        let near = thm_a1_bounds(&s, 0.2 - 1e-12).unwrap();
        let lb = near.lower_bound_t_star.unwrap();
        assert!(lb > 0.0 && lb < 1e-6, "{lb}");
    }

    #[test]
    fn alpha_in_range() {
        let s = -3.0 / (2.0 * 2f64.sqrt());
        let a = formulas::alpha(s, 1.0);
        let by_hand = (3.0 / (2.0 * 2f64.sqrt())) / (26.0 * (1.0 + 3.0 / (4.0 * 2f64.sqrt())));
        assert!((a - by_hand).abs() < 1e-15);
        assert!(a > 0.0 && a < 1.0 / 13.0);
        assert!(formulas::alpha(-1e-9, 1.0) < 1e-10);
    }
}
