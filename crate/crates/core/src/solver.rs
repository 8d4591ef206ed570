//! Minimax prediction under a Wasserstein ambiguity set.
//!
//! The worst-case mean squared error over a ball of radius `delta` around a
//! joint potential-outcome law with effect variance `V` has the closed form
//! `{ sqrt(V + (tau* - tau)^2) + delta (2 + |tau|^q)^(1/q) }^2`. Minimizing the
//! expression inside the braces over `tau` gives the robust prediction
//! `f(V, delta)`. The objective is convex and its minimizer always lies
//! between zero and `tau*`, which gives every solver below a guaranteed
//! bracket.
//!
//! Notation used in this module:
//!
//! ```text
//! A(tau) = sqrt(V + (tau* - tau)^2)        fit term
//! B(tau) = (2 + |tau|^q)^(1/q)             penalty
//! M(tau) = A(tau) + delta B(tau)           dual objective
//! ```

use serde::{Deserialize, Serialize};

use crate::bounds::{estimate_bounds, BoundMethod, VarianceBounds};
use crate::error::{Error, Result};
use crate::estimate::estimate_ate_diff_means;
use crate::sample::ExperimentalSample;

/// Bracket width tolerance, relative to the upper end of the bracket.
const BRACKET_TOL: f64 = 4.0 * f64::EPSILON;
const MAX_ITER: usize = 200;
/// Minimizers smaller than this in magnitude are reported as exactly zero.
const ZERO_SNAP: f64 = 1e-10;

/// Wasserstein radius and dual penalty order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    /// Radius of the ambiguity set, in outcome units.
    pub delta: f64,
    /// Dual penalty order, conjugate to the cost-norm order `p`.
    pub q: f64,
}

impl RobustConfig {
    pub fn new(delta: f64, q: f64) -> Result<Self> {
        let config = Self { delta, q };
        config.validate()?;
        Ok(config)
    }

    /// Builds the configuration from the cost-norm order `p` in `(1, inf]`,
    /// using `1/p + 1/q = 1`.
    pub fn from_p(delta: f64, p: f64) -> Result<Self> {
        if p.is_nan() || p <= 1.0 {
            return Err(Error::Domain(format!("cost-norm order p = {p} must exceed 1")));
        }
        let q = if p.is_infinite() { 1.0 } else { p / (p - 1.0) };
        Self::new(delta, q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Domain(format!(
                "radius delta = {} must be finite and >= 0",
                self.delta
            )));
        }
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return Err(Error::Domain(format!(
                "penalty order q = {} must be finite and >= 1",
                self.q
            )));
        }
        Ok(())
    }
}

/// `A(tau) = sqrt(V + (tau* - tau)^2)`.
pub fn fit_term(tau: f64, tau_star: f64, v: f64) -> f64 {
    (v + (tau_star - tau).powi(2)).sqrt()
}

/// `A'(tau) = (tau - tau*) / A(tau)`.
pub fn fit_slope(tau: f64, tau_star: f64, v: f64) -> f64 {
    (tau - tau_star) / fit_term(tau, tau_star, v)
}

/// `A''(tau) = V / A(tau)^3`.
pub fn fit_curvature(tau: f64, tau_star: f64, v: f64) -> f64 {
    v / fit_term(tau, tau_star, v).powi(3)
}

/// `B(tau) = (2 + |tau|^q)^(1/q)`, rearranged for `|tau| >= 1` so large
/// arguments do not overflow.
pub fn penalty(tau: f64, q: f64) -> f64 {
    let x = tau.abs();
    if x >= 1.0 {
        x * (1.0 + 2.0 * x.powf(-q)).powf(1.0 / q)
    } else {
        (2.0 + x.powf(q)).powf(1.0 / q)
    }
}

/// `B'(tau) = sign(tau) (1 + 2 |tau|^-q)^(-(q-1)/q)`; zero at the origin.
pub fn penalty_slope(tau: f64, q: f64) -> f64 {
    if tau == 0.0 {
        return 0.0;
    }
    let x = tau.abs();
    let s = (1.0 + 2.0 * x.powf(-q)).powf(-(q - 1.0) / q);
    s.copysign(tau)
}

/// `B''(tau) = 2 (q-1) |tau|^(q-2) (2 + |tau|^q)^(1/q - 2)`.
///
/// At the origin this is infinite for `q < 2`, `1/sqrt(2)` for `q = 2` and
/// zero for `q > 2`.
pub fn penalty_curvature(tau: f64, q: f64) -> f64 {
    if q == 1.0 {
        return 0.0;
    }
    let x = tau.abs();
    if x >= 1.0 {
        2.0 * (q - 1.0) * x.powf(-q - 1.0) * (1.0 + 2.0 * x.powf(-q)).powf(1.0 / q - 2.0)
    } else {
        2.0 * (q - 1.0) * x.powf(q - 2.0) * (2.0 + x.powf(q)).powf(1.0 / q - 2.0)
    }
}

/// Unsquared dual objective `M(tau) = A(tau) + delta B(tau)`.
pub fn dual_objective(tau: f64, tau_star: f64, v: f64, config: &RobustConfig) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("variance bound {v} must be >= 0")));
    }
    Ok(fit_term(tau, tau_star, v) + config.delta * penalty(tau, config.q))
}

/// Derivative `M'(tau)` away from the origin and from the kink at `tau*`
/// when `V = 0`.
pub fn objective_slope(tau: f64, tau_star: f64, v: f64, config: &RobustConfig) -> f64 {
    fit_slope(tau, tau_star, v) + config.delta * penalty_slope(tau, config.q)
}

/// Radius up to which a homogeneous effect (`V = 0`) is predicted unshrunk:
/// `(2 / |tau*|^q + 1)^(1 - 1/q)`.
pub fn homogeneous_threshold(tau_star: f64, q: f64) -> Result<f64> {
    if tau_star == 0.0 || !tau_star.is_finite() {
        return Err(Error::Domain(format!(
            "threshold needs a finite nonzero tau*, got {tau_star}"
        )));
    }
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::Domain(format!("threshold needs q > 1, got {q}")));
    }
    let x = tau_star.abs();
    // 2 / x^q written as 2 x^-q keeps large |tau*| finite
    Ok((2.0 * x.powf(-q) + 1.0).powf(1.0 - 1.0 / q))
}

/// The robust prediction `f(V, delta) = argmin_tau M(tau)`.
///
/// The result has the sign of `tau*` and magnitude at most `|tau*|`. Exact
/// special cases: `delta = 0` and `tau* = 0` return `tau*`; a homogeneous
/// effect (`V = 0`) returns `tau*` while `delta` stays below
/// [`homogeneous_threshold`].
pub fn solve_minimax(tau_star: f64, v: f64, config: &RobustConfig) -> Result<f64> {
    config.validate()?;
    if !tau_star.is_finite() {
        return Err(Error::Domain(format!("tau* = {tau_star} is not finite")));
    }
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Domain(format!("variance bound {v} must be finite and >= 0")));
    }
    if config.delta == 0.0 || tau_star == 0.0 {
        return Ok(tau_star);
    }
    // M is symmetric under (tau*, tau) -> (-tau*, -tau); solve for |tau*|.
    let t = tau_star.abs();
    let delta = config.delta;
    let q = config.q;

    let magnitude = if q == 1.0 {
        // B'(tau) = 1 on (0, t]: the first-order condition is solvable in
        // closed form, and zero is optimal once delta dominates |A'(0)|.
        if v == 0.0 {
            if delta <= 1.0 {
                t
            } else {
                0.0
            }
        } else if delta >= t / (v + t * t).sqrt() {
            0.0
        } else {
            let shrink = delta * (v / (1.0 - delta * delta)).sqrt();
            let tau = (t - shrink).max(0.0);
            if tau < ZERO_SNAP {
                0.0
            } else {
                tau
            }
        }
    } else if v == 0.0 {
        if delta <= homogeneous_threshold(t, q)? {
            t
        } else {
            // slope of |t - tau| is -1 on (0, t)
            bisect(|tau| -1.0 + delta * penalty_slope(tau, q), 0.0, t)?
        }
    } else {
        bisect(|tau| objective_slope(tau, t, v, config), 0.0, t)?
    };
    Ok(magnitude.copysign(tau_star))
}

/// Root of an increasing function with `f(lo) < 0 < f(hi)` and `lo = 0`,
/// bisected to full relative precision. Roots below the zero snap are
/// reported as zero.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    for _ in 0..MAX_ITER {
        if hi < ZERO_SNAP {
            return Ok(0.0);
        }
        let mid = 0.5 * (lo + hi);
        if hi - lo <= BRACKET_TOL * hi || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let g = f(mid);
        if g.is_nan() {
            return Err(Error::Convergence(format!("slope is NaN at {mid}")));
        }
        if g > 0.0 {
            hi = mid;
        } else if g < 0.0 {
            lo = mid;
        } else {
            return Ok(mid);
        }
    }
    Err(Error::Convergence(format!(
        "bracket [{lo}, {hi}] still open after {MAX_ITER} bisections"
    )))
}

/// One row of a radius sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub tau_p: f64,
    pub tau_o: f64,
}

/// Pessimistic and optimistic predictions along a sequence of radii.
pub fn sweep_delta(
    tau_star: f64,
    bounds: &VarianceBounds,
    q: f64,
    deltas: &[f64],
) -> Result<Vec<SweepRow>> {
    if deltas.is_empty() {
        return Err(Error::Domain("sweep needs at least one radius".into()));
    }
    deltas
        .iter()
        .map(|&delta| {
            let config = RobustConfig::new(delta, q)?;
            Ok(SweepRow {
                delta,
                tau_p: solve_minimax(tau_star, bounds.v_p, &config)?,
                tau_o: solve_minimax(tau_star, bounds.v_o, &config)?,
            })
        })
        .collect()
}

/// Point estimates of the effect and of both bound predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimates {
    pub tau_star: f64,
    /// Prediction under the largest effect variance.
    pub tau_p: f64,
    /// Prediction under the smallest effect variance.
    pub tau_o: f64,
    pub config: RobustConfig,
    pub bounds: VarianceBounds,
}

impl BoundEstimates {
    pub fn from_parts(tau_star: f64, bounds: VarianceBounds, config: RobustConfig) -> Result<Self> {
        Ok(Self {
            tau_star,
            tau_p: solve_minimax(tau_star, bounds.v_p, &config)?,
            tau_o: solve_minimax(tau_star, bounds.v_o, &config)?,
            config,
            bounds,
        })
    }

    /// `(min, max)` of the two predictions; the order of `tau_p` and `tau_o`
    /// flips with the sign of `tau*`.
    pub fn ordered(&self) -> (f64, f64) {
        (self.tau_p.min(self.tau_o), self.tau_p.max(self.tau_o))
    }
}

/// Difference in means, variance bounds and both robust predictions.
pub fn estimate_robust(
    sample: &ExperimentalSample,
    config: &RobustConfig,
    method: BoundMethod,
) -> Result<BoundEstimates> {
    let bounds = estimate_bounds(sample, method)?;
    BoundEstimates::from_parts(estimate_ate_diff_means(sample), bounds, *config)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn cfg(delta: f64, q: f64) -> RobustConfig {
        RobustConfig::new(delta, q).unwrap()
    }

    /// Brute-force argmin over a uniform grid on `[min(0, t), max(0, t)]`.
    fn grid_argmin(tau_star: f64, v: f64, config: &RobustConfig, points: usize) -> f64 {
        let (lo, hi) = (tau_star.min(0.0), tau_star.max(0.0));
        let step = (hi - lo) / (points - 1) as f64;
        (0..points)
            .map(|k| lo + step * k as f64)
            .map(|tau| (tau, dual_objective(tau, tau_star, v, config).unwrap()))
            .fold((lo, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0
    }

    #[test]
    fn objective_examples() {
        assert_eq!(dual_objective(0.0, 0.0, 1.0, &cfg(0.0, 2.0)).unwrap(), 1.0);
        let m = dual_objective(0.0, 3.0, 0.0, &cfg(1.0, 2.0)).unwrap();
        assert!((m - (3.0 + 2f64.sqrt())).abs() < 1e-14);
        let m = dual_objective(2.0, 2.0, 5.0, &cfg(0.5, 2.0)).unwrap();
        assert!((m - (5f64.sqrt() + 0.5 * 6f64.sqrt())).abs() < 1e-14);
        assert!(matches!(
            dual_objective(0.0, 0.0, -1.0, &cfg(0.0, 2.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn config_from_p() {
        assert!((RobustConfig::from_p(0.1, 1.5).unwrap().q - 3.0).abs() < 1e-12);
        assert!((RobustConfig::from_p(0.1, 3.0).unwrap().q - 1.5).abs() < 1e-12);
        assert_eq!(RobustConfig::from_p(0.1, f64::INFINITY).unwrap().q, 1.0);
        assert!(RobustConfig::from_p(0.1, 1.0).is_err());
        assert!(RobustConfig::new(-0.1, 2.0).is_err());
        assert!(RobustConfig::new(0.1, 0.5).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert!((homogeneous_threshold(2.0, 2.0).unwrap() - 1.5f64.sqrt()).abs() < 1e-14);
        assert!((homogeneous_threshold(1.0, 2.0).unwrap() - 3f64.sqrt()).abs() < 1e-14);
        assert!((homogeneous_threshold(-1.0, 2.0).unwrap() - 3f64.sqrt()).abs() < 1e-14);
        let expect = 1.25f64.powf(2.0 / 3.0);
        assert!((homogeneous_threshold(2.0, 3.0).unwrap() - expect).abs() < 1e-14);
        assert!(homogeneous_threshold(0.0, 2.0).is_err());
        assert!(homogeneous_threshold(1.0, 1.0).is_err());
        // decreasing in |tau*|
        let a = homogeneous_threshold(0.5, 2.5).unwrap();
        let b = homogeneous_threshold(1.5, 2.5).unwrap();
        assert!(a > b);
    }

    #[test]
    fn minimax_examples() {
        assert_eq!(solve_minimax(2.0, 0.0, &cfg(1.0, 2.0)).unwrap(), 2.0);
        let case1 = solve_minimax(1.8, 2.2, &cfg(0.1, 2.0)).unwrap();
        assert!((case1 - 1.686).abs() < 1e-3, "{case1}");
        let case2 = solve_minimax(1.8, 2.2, &cfg(1.0, 2.0)).unwrap();
        assert!((case2 - 0.879).abs() < 1e-3, "{case2}");
        for (t, v) in [(3.0, 1.0), (-2.0, 0.0), (0.7, 10.0)] {
            assert_eq!(solve_minimax(t, v, &cfg(0.0, 2.0)).unwrap(), t);
        }
        assert_eq!(solve_minimax(0.0, 4.0, &cfg(2.0, 1.5)).unwrap(), 0.0);
    }

    #[test]
    fn homogeneous_past_threshold_shrinks() {
        let bar = homogeneous_threshold(2.0, 2.0).unwrap();
        let f = solve_minimax(2.0, 0.0, &cfg(bar + 0.3, 2.0)).unwrap();
        assert!(f < 2.0 && f > 0.0);
        let oracle = grid_argmin(2.0, 0.0, &cfg(bar + 0.3, 2.0), 200_001);
        assert!((f - oracle).abs() < 2e-5);
    }

    #[test]
    fn lasso_like_order_one() {
        // q = 1 and V = 0: either tau* or zero
        assert_eq!(solve_minimax(2.0, 0.0, &cfg(0.9, 1.0)).unwrap(), 2.0);
        assert_eq!(solve_minimax(2.0, 0.0, &cfg(1.1, 1.0)).unwrap(), 0.0);
        // q = 1 and V > 0: hard thresholding at |A'(0)|
        let t: f64 = 1.0;
        let v: f64 = 3.0;
        let cut = t / (v + t * t).sqrt();
        assert_eq!(solve_minimax(t, v, &cfg(cut + 1e-6, 1.0)).unwrap(), 0.0);
        let f = solve_minimax(t, v, &cfg(cut * 0.5, 1.0)).unwrap();
        assert!(f > 0.0 && f < t);
        let oracle = grid_argmin(t, v, &cfg(cut * 0.5, 1.0), 200_001);
        assert!((f - oracle).abs() < 1e-5);
    }

    #[test]
    fn sweep_examples() {
        let bounds = VarianceBounds { v_o: 1.0, v_p: 9.0, method: BoundMethod::Sharp };
        let rows = sweep_delta(1.5, &bounds, 2.0, &[0.0]).unwrap();
        assert_eq!(rows, vec![SweepRow { delta: 0.0, tau_p: 1.5, tau_o: 1.5 }]);

        let flat = VarianceBounds { v_o: 0.0, v_p: 0.0, method: BoundMethod::Sharp };
        let deltas: Vec<f64> = (0..12).map(|k| 0.1 * k as f64).collect();
        for row in sweep_delta(2.0, &flat, 2.0, &deltas).unwrap() {
            assert_eq!((row.tau_p, row.tau_o), (2.0, 2.0));
        }

        let deltas: Vec<f64> = (0..60).map(|k| 0.05 * k as f64).collect();
        let rows = sweep_delta(2.0, &bounds, 2.0, &deltas).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].tau_p.abs() <= w[0].tau_p.abs());
            assert!(w[1].tau_o.abs() <= w[0].tau_o.abs());
        }
        assert!(sweep_delta(2.0, &bounds, 2.0, &[]).is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-5;
        for &q in &[1.0, 1.5, 2.0, 3.0, 10.0] {
            for &tau in &[-3.0, -0.7, 0.2, 0.9, 1.0, 1.3, 4.0] {
                let db = (penalty(tau + h, q) - penalty(tau - h, q)) / (2.0 * h);
                assert!((db - penalty_slope(tau, q)).abs() < 1e-7 * (1.0 + db.abs()), "q {q} tau {tau}");
                let d2b = (penalty_slope(tau + h, q) - penalty_slope(tau - h, q)) / (2.0 * h);
                let exact = penalty_curvature(tau, q);
                assert!((d2b - exact).abs() < 1e-6 * (1.0 + exact.abs()), "q {q} tau {tau}: {d2b} vs {exact}");
            }
        }
        assert_eq!(penalty_curvature(0.0, 3.0), 0.0);
        assert!((penalty_curvature(0.0, 2.0) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(penalty_curvature(0.0, 1.5).is_infinite());
    }

    #[test]
    fn penalty_survives_large_arguments() {
        let b = penalty(1e40, 10.0);
        assert!((b / 1e40 - 1.0).abs() < 1e-12);
        assert!((penalty(0.0, 2.0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(penalty(3.0, 1.0), 5.0);
    }

    #[test]
    fn q_ordering_holds_for_small_predictions() {
        // Larger q penalizes |tau| < 1 less, so once the prediction has shrunk
        // below one the solutions order by q.
        for &v in &[0.5, 2.0, 5.0] {
            for &delta in &[1.0, 1.5, 2.0, 3.0] {
                let sols: Vec<f64> = [1.5, 2.0, 3.0, 5.0]
                    .iter()
                    .map(|&q| solve_minimax(2.0, v, &cfg(delta, q)).unwrap())
                    .collect();
                if sols.iter().all(|&s| s < 1.0) {
                    for w in sols.windows(2) {
                        assert!(w[0] <= w[1] + 1e-12, "v {v} delta {delta}: {sols:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn q_ordering_fails_near_tau_star() {
        // With tau near 1.8 the q = 3 penalty slope exceeds the q = 2 one, so
        // the ordering reverses for small radii.
        let q2 = solve_minimax(1.8, 2.2, &cfg(0.1, 2.0)).unwrap();
        let q3 = solve_minimax(1.8, 2.2, &cfg(0.1, 3.0)).unwrap();
        assert!(q3 < q2);
    }

    proptest! {
        #[test]
        fn matches_grid_oracle(
            tau_star in -5.0f64..5.0,
            v in 0.0f64..10.0,
            delta in 0.0f64..3.0,
            qi in 0usize..5,
        ) {
            let q = [1.0, 1.5, 2.0, 3.0, 10.0][qi];
            let c = cfg(delta, q);
            let f = solve_minimax(tau_star, v, &c).unwrap();
            let oracle = grid_argmin(tau_star, v, &c, 100_001);
            let spacing = tau_star.abs() / 100_000.0;
            let mf = dual_objective(f, tau_star, v, &c).unwrap();
            let mo = dual_objective(oracle, tau_star, v, &c).unwrap();
            prop_assert!(mf <= mo + 1e-12);
            prop_assert!((f - oracle).abs() <= 2.0 * spacing + 1e-4, "{f} vs {oracle}");
        }

        #[test]
        fn convex_objective(
            tau_star in -5.0f64..5.0,
            v in 0.0f64..10.0,
            delta in 0.0f64..3.0,
            q in 1.0f64..6.0,
            a in -8.0f64..8.0,
            b in -8.0f64..8.0,
            lambda in 0.0f64..1.0,
        ) {
            let c = cfg(delta, q);
            let m = |x: f64| dual_objective(x, tau_star, v, &c).unwrap();
            let mid = lambda * a + (1.0 - lambda) * b;
            prop_assert!(m(mid) <= lambda * m(a) + (1.0 - lambda) * m(b) + 1e-10);
        }

        #[test]
        fn first_order_condition_residual(
            tau_star in prop_oneof![-5.0f64..-0.05, 0.05f64..5.0],
            v in 0.01f64..10.0,
            delta in 0.01f64..3.0,
            q in 1.05f64..6.0,
        ) {
            let c = cfg(delta, q);
            let f = solve_minimax(tau_star, v, &c).unwrap();
            prop_assume!(f != 0.0);
            prop_assert!(objective_slope(f, tau_star, v, &c).abs() <= 1e-8);
        }

        #[test]
        fn shrinkage_sign_and_monotonicity(
            tau_star in prop_oneof![-5.0f64..-0.05, 0.05f64..5.0],
            v1 in 0.0f64..10.0,
            dv in 0.0f64..10.0,
            delta in 0.01f64..3.0,
            q in 1.0f64..6.0,
        ) {
            let c = cfg(delta, q);
            let lo_v = solve_minimax(tau_star, v1, &c).unwrap();
            let hi_v = solve_minimax(tau_star, v1 + dv, &c).unwrap();
            // sign and bracket
            for f in [lo_v, hi_v] {
                prop_assert!(f * tau_star >= 0.0);
                prop_assert!(f.abs() <= tau_star.abs());
            }
            // larger variance shrinks more
            prop_assert!(hi_v.abs() <= lo_v.abs() + 1e-10);
            // heterogeneous effects shrink immediately
            if v1 > 1e-6 {
                prop_assert!(lo_v.abs() < tau_star.abs());
            }
            prop_assert_eq!(solve_minimax(0.0, v1, &c).unwrap(), 0.0);
        }
    }
}
