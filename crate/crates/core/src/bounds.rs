//! Bounds on `Var(Y(1) - Y(0))` from the marginal outcome distributions.
//!
//! The joint law of the potential outcomes is never observed, so its variance
//! is only bounded. Sharp bounds pair the marginal quantile functions
//! comonotonically (smallest variance, `v_o`) and antitonically (largest
//! variance, `v_p`). Neyman bounds replace the coupling by Cauchy-Schwarz,
//! `(sigma1 -/+ sigma0)^2`, and always contain the sharp pair.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::estimate_moments;
use crate::sample::{merged_quantile_integral, ExperimentalSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMethod {
    Sharp,
    Neyman,
}

impl fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundMethod::Sharp => "sharp",
            BoundMethod::Neyman => "neyman",
        })
    }
}

impl FromStr for BoundMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sharp" => Ok(BoundMethod::Sharp),
            "neyman" => Ok(BoundMethod::Neyman),
            other => Err(Error::Validation(format!(
                "unknown bound method `{other}` (expected sharp or neyman)"
            ))),
        }
    }
}

/// Lower (`v_o`, optimistic) and upper (`v_p`, pessimistic) variance bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBounds {
    pub v_o: f64,
    pub v_p: f64,
    pub method: BoundMethod,
}

/// `((sigma1 - sigma0)^2, (sigma1 + sigma0)^2)`.
pub fn neyman_bounds(sigma1_sq: f64, sigma0_sq: f64) -> Result<VarianceBounds> {
    if !(sigma1_sq >= 0.0 && sigma0_sq >= 0.0) {
        return Err(Error::Domain(format!(
            "arm variances must be nonnegative (got {sigma1_sq}, {sigma0_sq})"
        )));
    }
    let (s1, s0) = (sigma1_sq.sqrt(), sigma0_sq.sqrt());
    Ok(VarianceBounds {
        v_o: (s1 - s0).powi(2),
        v_p: (s1 + s0).powi(2),
        method: BoundMethod::Neyman,
    })
}

/// Plug-in Neyman bounds from the per-arm sample variances.
pub fn neyman_bounds_empirical(sample: &ExperimentalSample) -> Result<VarianceBounds> {
    let m = estimate_moments(sample)?;
    neyman_bounds(m.sigma1_sq, m.sigma0_sq)
}

/// Plug-in sharp bounds.
///
/// The comonotone and antitone covariances are integrals of products of the
/// empirical quantile functions, evaluated exactly over the merged breakpoint
/// grid of the two arms. A slightly negative `v_o` from rounding is clamped.
pub fn sharp_bounds_empirical(sample: &ExperimentalSample) -> Result<VarianceBounds> {
    let m = estimate_moments(sample)?;
    let (cov_u, cov_l) = extreme_covariances(sample);
    let total = m.sigma1_sq + m.sigma0_sq;
    Ok(VarianceBounds {
        v_o: (total - 2.0 * cov_u).max(0.0),
        v_p: (total - 2.0 * cov_l).max(0.0),
        method: BoundMethod::Sharp,
    })
}

/// Comonotone and antitone covariances of the two empirical marginals.
pub(crate) fn extreme_covariances(sample: &ExperimentalSample) -> (f64, f64) {
    let t = sample.treated();
    let c = sample.control();
    let (mean1, mean0) = (t.mean(), c.mean());
    let centered1: Vec<f64> = t.sorted_values().iter().map(|y| y - mean1).collect();
    let c0 = c.sorted_values();
    let cov_u = merged_quantile_integral(&centered1, c0.iter().map(|y| y - mean0), |a, b| a * b);
    let cov_l = merged_quantile_integral(&centered1, c0.iter().rev().map(|y| y - mean0), |a, b| {
        a * b
    });
    (cov_u, cov_l)
}

/// Bounds of the requested kind from a sample.
pub fn estimate_bounds(sample: &ExperimentalSample, method: BoundMethod) -> Result<VarianceBounds> {
    match method {
        BoundMethod::Sharp => sharp_bounds_empirical(sample),
        BoundMethod::Neyman => neyman_bounds_empirical(sample),
    }
}

/// Sharp bounds for population marginals given as quantile functions,
/// integrated with the midpoint rule on `grid_size` uniform cells.
pub fn sharp_bounds_population(
    q1: impl Fn(f64) -> f64,
    q0: impl Fn(f64) -> f64,
    grid_size: usize,
) -> Result<VarianceBounds> {
    if grid_size < 100 {
        return Err(Error::Domain(format!(
            "population quadrature needs grid_size >= 100, got {grid_size}"
        )));
    }
    let g = grid_size as f64;
    let x1: Vec<f64> = (0..grid_size).map(|k| q1((k as f64 + 0.5) / g)).collect();
    let x0: Vec<f64> = (0..grid_size).map(|k| q0((k as f64 + 0.5) / g)).collect();
    if x1.iter().chain(&x0).any(|v| !v.is_finite()) {
        return Err(Error::Domain("quantile function returned a non-finite value".into()));
    }
    let m1 = x1.iter().sum::<f64>() / g;
    let m0 = x0.iter().sum::<f64>() / g;
    let var1 = x1.iter().map(|v| (v - m1).powi(2)).sum::<f64>() / g;
    let var0 = x0.iter().map(|v| (v - m0).powi(2)).sum::<f64>() / g;
    let cov_u = x1.iter().zip(&x0).map(|(a, b)| (a - m1) * (b - m0)).sum::<f64>() / g;
    let cov_l = x1
        .iter()
        .zip(x0.iter().rev())
        .map(|(a, b)| (a - m1) * (b - m0))
        .sum::<f64>()
        / g;
    Ok(VarianceBounds {
        v_o: (var1 + var0 - 2.0 * cov_u).max(0.0),
        v_p: (var1 + var0 - 2.0 * cov_l).max(0.0),
        method: BoundMethod::Sharp,
    })
}
