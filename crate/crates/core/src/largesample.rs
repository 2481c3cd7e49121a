//! Neyman / super-population inference inside a window: difference-in-means
//! with a Gaussian confidence interval, a two-sided test of a zero average
//! effect, and power against a stated alternative.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::stats::{diff_means, neyman_variance, VarianceEstimate, VarianceKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LargeSampleResult {
    pub estimate: f64,
    pub variance: VarianceEstimate,
    pub z: f64,
    pub p_value: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub power_at_d: f64,
    pub d: f64,
    pub warnings: Vec<String>,
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// `z_{1 - alpha/2}`.
pub fn critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(std_normal().inverse_cdf(1.0 - alpha / 2.0))
}

/// Two-sided Gaussian p-value `2 Phi(-|z|)`.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * normal_cdf(-z.abs())).min(1.0)
}

/// Half the standard deviation of the control-group outcome.
pub fn default_d(t: &[bool], y: &[f64]) -> f64 {
    let ctrl: Vec<f64> = t.iter().zip(y).filter(|(&ti, _)| !ti).map(|(_, &v)| v).collect();
    if ctrl.len() < 2 {
        return 0.0;
    }
    let m = ctrl.iter().sum::<f64>() / ctrl.len() as f64;
    let var = ctrl.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ctrl.len() - 1) as f64;
    0.5 * var.sqrt()
}

/// Power of the two-sided level-`alpha` Gaussian test against a true effect
/// `d` when the estimator has variance `variance`.
pub fn power_from_variance(variance: f64, d: f64, alpha: f64) -> Result<f64> {
    let z = critical_value(alpha)?;
    if variance <= 0.0 {
        return Ok(if d == 0.0 { alpha } else { 1.0 });
    }
    let shift = d.abs() / variance.sqrt();
    Ok(normal_cdf(-z + shift) + normal_cdf(-z - shift))
}

/// Power of the window's difference-in-means test against effect `d`.
pub fn power(t: &[bool], y: &[f64], d: f64, alpha: f64, kind: VarianceKind) -> Result<f64> {
    let v = neyman_variance(t, y, kind)?;
    power_from_variance(v.value, d, alpha)
}

/// Difference-in-means with Gaussian inference. `d` defaults to half the
/// control-group standard deviation.
pub fn neyman_test(t: &[bool], y: &[f64], kind: VarianceKind, alpha: f64, d: Option<f64>) -> Result<LargeSampleResult> {
    let zcrit = critical_value(alpha)?;
    let estimate = diff_means(t, y, None)?;
    let variance = neyman_variance(t, y, kind)?;
    let mut warnings = Vec::new();
    let se = variance.value.sqrt();
    let (z, p_value) = if se > 0.0 {
        let z = estimate / se;
        (z, two_sided_p(z))
    } else if estimate != 0.0 {
        warnings.push("zero estimated variance with a nonzero estimate; p-value set to 0".to_string());
        (estimate.signum() * f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    let d = d.unwrap_or_else(|| default_d(t, y));
    let power_at_d = power_from_variance(variance.value, d, alpha)?;
    Ok(LargeSampleResult {
        estimate,
        ci: (estimate - zcrit * se, estimate + zcrit * se),
        variance,
        z,
        p_value,
        alpha,
        power_at_d,
        d,
        warnings,
    })
}
