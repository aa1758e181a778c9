//! Power-law fits of hitting time against the initial probability of the
//! optimal output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One swept value and its measured hitting time (`None` if not reached).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub pi0_star: f64,
    pub t_hit: Option<f64>,
}

/// Least-squares line `ln t = slope * ln pi0 + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual in log space.
    pub max_residual: f64,
    pub n: usize,
}

pub fn fit_scaling_exponent(points: &[ScalingPoint]) -> Result<ScalingFit> {
    let mut pairs = Vec::with_capacity(points.len());
    for p in points {
        let t = p.t_hit.ok_or_else(|| {
            Error::Parameter(format!(
                "hitting time at pi0_star = {} was not reached; rerun with a longer horizon",
                p.pi0_star
            ))
        })?;
        if !(p.pi0_star > 0.0 && t > 0.0 && t.is_finite()) {
            return Err(Error::Parameter(format!(
                "need positive finite values, got pi0_star = {}, t_hit = {t}",
                p.pi0_star
            )));
        }
        pairs.push((p.pi0_star.ln(), t.ln()));
    }
    if pairs.len() < 3 {
        return Err(Error::Parameter(format!(
            "need at least 3 points, got {}",
            pairs.len()
        )));
    }
    // a fixed order makes the floating-point sums independent of input order
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("all pi0_star values are equal".into()));
    }
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = pairs
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).abs())
        .fold(0.0, f64::max);
    Ok(ScalingFit {
        slope,
        intercept,
        max_residual,
        n: pairs.len(),
    })
}
