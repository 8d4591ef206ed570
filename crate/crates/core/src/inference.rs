//! Confidence intervals for the partially identified robust prediction.
//!
//! The identified set is the interval between the pessimistic and optimistic
//! predictions. [`im_interval`] covers every point of such a set uniformly in
//! its width. [`two_step_interval`] first tests `tau* = 0` at level `beta`,
//! then takes the union over a grid of `tau*` values of intervals built with
//! `tau*` held fixed, each at level `1 - alpha + beta`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bounds::BoundMethod;
use crate::covariance::{estimate_sigma, loadings, SharpIntegration, SigmaMatrix};
use crate::error::{Error, Result};
use crate::solver::{estimate_robust, solve_minimax, BoundEstimates, RobustConfig};
use crate::sample::ExperimentalSample;

const CRITICAL_TOL: f64 = 1e-10;
const ORDER_SLACK: f64 = 1e-10;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_BETA: f64 = 0.045;
pub const DEFAULT_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalMethod {
    #[serde(rename = "im")]
    Im,
    #[serde(rename = "im_bonferroni")]
    ImBonferroni,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalDiagnostics {
    /// Smallest and largest critical value used.
    pub critical_values: (f64, f64),
    pub grid_points: Option<usize>,
    pub warnings: Vec<String>,
}

/// A confidence interval with `lower <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub lower: f64,
    pub upper: f64,
    /// Requested size; coverage target is `1 - alpha`.
    pub alpha: f64,
    pub method: IntervalMethod,
    pub diagnostics: IntervalDiagnostics,
}

impl IntervalEstimate {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")))
    }
}

/// Solves `Phi(c + width) - Phi(-c) = 1 - alpha` for `c`, where `width` is the
/// identified-set length in standard-error units. The root lies between the
/// one-sided and two-sided normal quantiles.
pub fn im_critical_value(width: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(width >= 0.0) {
        return Err(Error::Domain(format!("standardized width {width} must be >= 0")));
    }
    let z = standard_normal();
    let mut lo = z.inverse_cdf(1.0 - alpha);
    let mut hi = z.inverse_cdf(1.0 - alpha / 2.0);
    if width.is_infinite() {
        return Ok(lo);
    }
    let target = 1.0 - alpha;
    while hi - lo > CRITICAL_TOL {
        let mid = 0.5 * (lo + hi);
        if z.cdf(mid + width) - z.cdf(-mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Interval for a partially identified parameter with estimated bounds
/// `[lo_hat, hi_hat]`. `sd_lo` and `sd_hi` are standard deviations of
/// `sqrt(n)` times the bound estimates.
pub fn im_interval(
    lo_hat: f64,
    hi_hat: f64,
    sd_lo: f64,
    sd_hi: f64,
    n: usize,
    alpha: f64,
) -> Result<IntervalEstimate> {
    check_alpha(alpha)?;
    if !(sd_lo >= 0.0 && sd_hi >= 0.0) {
        return Err(Error::Domain(format!("standard deviations must be >= 0 ({sd_lo}, {sd_hi})")));
    }
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    let mut warnings = Vec::new();
    let (lo, hi, sd_lo, sd_hi) = if lo_hat <= hi_hat {
        (lo_hat, hi_hat, sd_lo, sd_hi)
    } else if lo_hat - hi_hat < ORDER_SLACK {
        warnings.push(format!("swapped bounds inverted by {:.1e}", lo_hat - hi_hat));
        (hi_hat, lo_hat, sd_hi, sd_lo)
    } else {
        return Err(Error::Order(format!("lower bound {lo_hat} exceeds upper bound {hi_hat}")));
    };
    let root_n = (n as f64).sqrt();
    let sd_max = sd_lo.max(sd_hi);
    let width = if sd_max > 0.0 {
        root_n * (hi - lo) / sd_max
    } else if hi > lo {
        f64::INFINITY
    } else {
        0.0
    };
    let c = im_critical_value(width, alpha)?;
    Ok(IntervalEstimate {
        lower: lo - c * sd_lo / root_n,
        upper: hi + c * sd_hi / root_n,
        alpha,
        method: IntervalMethod::Im,
        diagnostics: IntervalDiagnostics { critical_values: (c, c), grid_points: None, warnings },
    })
}

/// Point estimates with the covariance of their plug-in components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceInputs {
    pub estimates: BoundEstimates,
    pub sigma: SigmaMatrix,
    pub n: usize,
}

impl InferenceInputs {
    pub fn from_sample(
        sample: &ExperimentalSample,
        config: &RobustConfig,
        method: BoundMethod,
        integration: SharpIntegration,
    ) -> Result<Self> {
        Ok(Self {
            estimates: estimate_robust(sample, config, method)?,
            sigma: estimate_sigma(sample, method, integration)?,
            n: sample.n(),
        })
    }

    /// Standard deviation of `sqrt(n) tau*`.
    pub fn sigma_tau(&self) -> f64 {
        self.sigma.tau_variance().sqrt()
    }

    /// Sandwich standard deviations of `sqrt(n) (tau_p, tau_o)`.
    pub fn bound_sds(&self) -> Result<(f64, f64)> {
        let e = &self.estimates;
        let l = loadings(e.tau_star, &e.bounds, e.tau_p, e.tau_o, &e.config)?;
        Ok((l.sd_p(&self.sigma), l.sd_o(&self.sigma)))
    }
}

/// Interval at level `1 - alpha` around `[min(tau_p, tau_o), max(..)]` with
/// unconditional sandwich standard deviations.
pub fn plain_im_interval(inputs: &InferenceInputs, alpha: f64) -> Result<IntervalEstimate> {
    let e = &inputs.estimates;
    let (sd_p, sd_o) = inputs.bound_sds()?;
    ordered_im(e.tau_p, e.tau_o, sd_p, sd_o, inputs.n, alpha)
}

fn ordered_im(
    tau_p: f64,
    tau_o: f64,
    sd_p: f64,
    sd_o: f64,
    n: usize,
    alpha: f64,
) -> Result<IntervalEstimate> {
    if tau_p <= tau_o {
        im_interval(tau_p, tau_o, sd_p, sd_o, n, alpha)
    } else {
        im_interval(tau_o, tau_p, sd_o, sd_p, n, alpha)
    }
}

/// The `tau* = 0` test that gates the second step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstStep {
    pub lower: f64,
    pub upper: f64,
    pub beta: f64,
    /// True when zero lies outside `[lower, upper]`.
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepInterval {
    pub first_step: FirstStep,
    /// Absent when the first step does not reject.
    pub interval: Option<IntervalEstimate>,
}

/// Two-step interval from precomputed estimates.
pub fn two_step_from_inputs(
    inputs: &InferenceInputs,
    alpha: f64,
    beta: f64,
    grid_points: usize,
) -> Result<TwoStepInterval> {
    check_alpha(alpha)?;
    let config = inputs.estimates.config;
    if config.q <= 1.0 {
        return Err(Error::UnsupportedConfig(format!(
            "two-step inference needs q > 1, got {}",
            config.q
        )));
    }
    if !(beta >= 0.0 && beta < alpha) {
        return Err(Error::Domain(format!("beta = {beta} must lie in [0, alpha = {alpha})")));
    }
    if grid_points < 25 {
        return Err(Error::Domain(format!("grid_points = {grid_points} must be >= 25")));
    }
    let root_n = (inputs.n as f64).sqrt();
    let tau_hat = inputs.estimates.tau_star;
    let half = standard_normal().inverse_cdf(1.0 - beta / 2.0) * inputs.sigma_tau() / root_n;
    let first_step = FirstStep {
        lower: tau_hat - half,
        upper: tau_hat + half,
        beta,
        rejected: !(tau_hat - half <= 0.0 && 0.0 <= tau_hat + half),
    };
    if !first_step.rejected {
        return Ok(TwoStepInterval { first_step, interval: None });
    }

    let bounds = inputs.estimates.bounds;
    let step = (first_step.upper - first_step.lower) / (grid_points - 1) as f64;
    let level = alpha - beta;
    let pieces: Vec<IntervalEstimate> = (0..grid_points)
        .into_par_iter()
        .map(|k| {
            let t = if k == grid_points - 1 {
                first_step.upper
            } else {
                first_step.lower + step * k as f64
            };
            let tau_p = solve_minimax(t, bounds.v_p, &config)?;
            let tau_o = solve_minimax(t, bounds.v_o, &config)?;
            let l = loadings(t, &bounds, tau_p, tau_o, &config)?.conditional();
            ordered_im(tau_p, tau_o, l.sd_p(&inputs.sigma), l.sd_o(&inputs.sigma), inputs.n, level)
        })
        .collect::<Result<_>>()?;

    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    let mut c_min = f64::INFINITY;
    let mut c_max = f64::NEG_INFINITY;
    let mut warnings = Vec::new();
    for p in pieces {
        lower = lower.min(p.lower);
        upper = upper.max(p.upper);
        c_min = c_min.min(p.diagnostics.critical_values.0);
        c_max = c_max.max(p.diagnostics.critical_values.1);
        warnings.extend(p.diagnostics.warnings);
    }
    Ok(TwoStepInterval {
        first_step,
        interval: Some(IntervalEstimate {
            lower,
            upper,
            alpha,
            method: IntervalMethod::ImBonferroni,
            diagnostics: IntervalDiagnostics {
                critical_values: (c_min, c_max),
                grid_points: Some(grid_points),
                warnings,
            },
        }),
    })
}

/// Two-step Bonferroni interval from a sample, with the default density-based
/// covariance for sharp bounds.
pub fn two_step_interval(
    sample: &ExperimentalSample,
    config: &RobustConfig,
    method: BoundMethod,
    alpha: f64,
    beta: f64,
    grid_points: usize,
) -> Result<TwoStepInterval> {
    if config.q <= 1.0 {
        return Err(Error::UnsupportedConfig(format!(
            "two-step inference needs q > 1, got {}",
            config.q
        )));
    }
    let inputs = InferenceInputs::from_sample(sample, config, method, SharpIntegration::default())?;
    two_step_from_inputs(&inputs, alpha, beta, grid_points)
}
