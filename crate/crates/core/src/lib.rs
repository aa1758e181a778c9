//! Policy-gradient dynamics of linear softmax bandits trained on a proxy
//! reward that may disagree with the ground truth.
//!
//! The crate is organized bottom-up:
//!
//! - [`policy`]: feature sets, reward tables and softmax policy evaluation.
//! - [`dynamics`]: exact gradients, gradient-flow integration, REINFORCE and
//!   hitting times.
//! - [`scenarios`]: experiment descriptions, reward-error categories and
//!   assumption checkers.
//! - [`theory`]: closed-form time bounds and thresholds.
//! - [`metrics`]: ranking-accuracy metrics over preference datasets.
//! - [`scaling`]: log-log fits of hitting times against initial probability.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod scaling;
pub mod scenarios;
pub mod theory;

pub use dynamics::{
    exact_gradient, hitting_time, logit_derivative, probability_derivative, reinforce_estimate,
    run_flow, run_reinforce, tv_divergence_pair, HittingTarget, HittingTimeResult,
    IntegratorConfig, Method, Trajectory, TvSeries, RNG_NAME,
};
pub use error::{Error, Result};
pub use metrics::{
    acc, estimate_value, hacc, regret, spearman, weighted_variant, OutputRecord, PreferenceDataset,
    PreferenceExample, ValueEstimate,
};
pub use policy::{
    advantage, expected_reward, reward_variance, softmax_probs, solve_initial_params, tv_distance,
    FeatureSet, PolicyParams, RewardChoice, RewardTable, StructuredRewardSpec,
};
pub use scaling::{fit_scaling_exponent, ScalingFit, ScalingPoint};
pub use scenarios::{
    build_error_scenario, build_fig2_scenario, build_geometry_scenario, build_neg_fail_scenario,
    check_assumptions, with_assumption_window, AssumptionItem, AssumptionReport, ErrorCategory,
    ErrorKnobs, Geometry, Scenario, ScenarioParts, Theorem, TvBudget,
};
pub use theory::{
    gradient_norm_bound, prop2_tv_threshold, prop_neg_fail_check, thm_a1_bounds, thm_a2_neg_bounds,
    thm_a3_pos_bounds, BoundReport, NegFailReport,
};

/// Version string recorded in exported artifacts.
pub const CODE_VERSION: &str = concat!("rewardlab-core ", env!("CARGO_PKG_VERSION"));
