//! Internally valid estimators: the average treatment effect and per-arm
//! central moments.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sample::{EmpiricalDistribution, ExperimentalSample};

/// Per-arm plug-in moments. Central moments are normalized by the arm size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmMoments {
    pub tau1: f64,
    pub tau0: f64,
    pub sigma1_sq: f64,
    pub sigma0_sq: f64,
    pub mu3_1: f64,
    pub mu3_0: f64,
    pub mu4_1: f64,
    pub mu4_0: f64,
    /// Treated fraction.
    pub e_hat: f64,
}

impl ArmMoments {
    /// Average treatment effect implied by the arm means.
    pub fn ate(&self) -> f64 {
        self.tau1 - self.tau0
    }

    /// `sigma1^2 / e + sigma0^2 / (1 - e)`, the asymptotic variance of the
    /// difference in means.
    pub fn ate_variance(&self) -> f64 {
        self.sigma1_sq / self.e_hat + self.sigma0_sq / (1.0 - self.e_hat)
    }
}

/// Difference in arm means.
pub fn estimate_ate_diff_means(sample: &ExperimentalSample) -> f64 {
    sample.treated().mean() - sample.control().mean()
}

/// Inverse probability weighting with a known design propensity `e`.
pub fn estimate_ate_ipw(sample: &ExperimentalSample, e: f64) -> Result<f64> {
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::Domain(format!("propensity {e} outside (0, 1)")));
    }
    let n = sample.n() as f64;
    let (treated, control) = sample
        .outcomes()
        .iter()
        .zip(sample.treatments())
        .fold((0.0, 0.0), |(t, c), (&y, &d)| {
            if d {
                (t + y, c)
            } else {
                (t, c + y)
            }
        });
    Ok(treated / (n * e) - control / (n * (1.0 - e)))
}

/// Arm means, central moments of orders 2 to 4 and the treated fraction.
pub fn estimate_moments(sample: &ExperimentalSample) -> Result<ArmMoments> {
    if sample.n1() < 2 || sample.n0() < 2 {
        return Err(Error::InsufficientData(format!(
            "moments need >= 2 observations per arm (treated {}, control {})",
            sample.n1(),
            sample.n0()
        )));
    }
    let (tau1, s1, m3_1, m4_1) = central_moments(sample.treated());
    let (tau0, s0, m3_0, m4_0) = central_moments(sample.control());
    Ok(ArmMoments {
        tau1,
        tau0,
        sigma1_sq: s1,
        sigma0_sq: s0,
        mu3_1: m3_1,
        mu3_0: m3_0,
        mu4_1: m4_1,
        mu4_0: m4_0,
        e_hat: sample.treated_fraction(),
    })
}

fn central_moments(dist: &EmpiricalDistribution) -> (f64, f64, f64, f64) {
    let values = dist.sorted_values();
    let m = values.len() as f64;
    let mean = dist.mean();
    let (m2, m3, m4) = values.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &y| {
        let d = y - mean;
        let d2 = d * d;
        (a + d2, b + d2 * d, c + d2 * d2)
    });
    (mean, m2 / m, m3 / m, m4 / m)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn arms(t: &[f64], c: &[f64]) -> ExperimentalSample {
        ExperimentalSample::from_arms(t, c).unwrap()
    }

    #[test]
    fn diff_means_examples() {
        assert_eq!(estimate_ate_diff_means(&arms(&[2.0, 4.0], &[1.0, 1.0])), 2.0);
        assert_eq!(
            estimate_ate_diff_means(&arms(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])),
            0.0
        );
        assert_eq!(estimate_ate_diff_means(&arms(&[5.0], &[3.0])), 2.0);
    }

    #[test]
    fn ipw_examples() {
        let s = arms(&[2.0], &[1.0]);
        assert_eq!(estimate_ate_ipw(&s, 0.5).unwrap(), 1.0);
        assert_eq!(
            estimate_ate_ipw(&arms(&[0.0, 0.0], &[0.0]), 0.3).unwrap(),
            0.0
        );
        assert!(matches!(estimate_ate_ipw(&s, 1.0), Err(Error::Domain(_))));
        assert!(matches!(estimate_ate_ipw(&s, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn moments_examples() {
        let m = estimate_moments(&arms(&[0.0, 2.0], &[7.0, 7.0, 7.0])).unwrap();
        assert_eq!((m.tau1, m.sigma1_sq, m.mu3_1, m.mu4_1), (1.0, 1.0, 0.0, 1.0));
        assert_eq!((m.sigma0_sq, m.mu3_0, m.mu4_0), (0.0, 0.0, 0.0));
        assert_eq!(m.e_hat, 0.4);
        assert!(matches!(
            estimate_moments(&arms(&[1.0], &[1.0, 2.0])),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn gaussian_moments_monte_carlo() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let treated: Vec<f64> = (0..1_000_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let m = estimate_moments(&arms(&treated, &[0.0, 1.0])).unwrap();
        assert!((m.sigma1_sq - 1.0).abs() < 0.02);
        assert!((m.mu4_1 - 3.0).abs() < 0.06);
    }

    proptest! {
        #[test]
        fn ipw_with_sample_fraction_is_diff_means(
            rows in prop::collection::vec((-50.0f64..50.0, any::<bool>()), 2..60)
        ) {
            let (y, t): (Vec<f64>, Vec<bool>) = rows.into_iter().unzip();
            if let Ok(s) = ExperimentalSample::new(y, t) {
                let dm = estimate_ate_diff_means(&s);
                let ipw = estimate_ate_ipw(&s, s.treated_fraction()).unwrap();
                let scale = s.outcomes().iter().fold(1.0f64, |a, y| a.max(y.abs()));
                prop_assert!((dm - ipw).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn location_and_scale_equivariance(
            t in prop::collection::vec(-10.0f64..10.0, 2..20),
            c in prop::collection::vec(-10.0f64..10.0, 2..20),
            shift in -100.0f64..100.0,
            scale in 0.1f64..10.0,
        ) {
            let s = arms(&t, &c);
            let base = estimate_moments(&s).unwrap();
            let shifted = estimate_moments(&s.map_outcomes(|y| y + shift).unwrap()).unwrap();
            prop_assert!((shifted.tau1 - base.tau1 - shift).abs() < 1e-9);
            prop_assert!((shifted.tau0 - base.tau0 - shift).abs() < 1e-9);
            prop_assert!((shifted.sigma1_sq - base.sigma1_sq).abs() < 1e-8);
            prop_assert!((shifted.mu3_0 - base.mu3_0).abs() < 1e-6);
            prop_assert!((shifted.mu4_1 - base.mu4_1).abs() < 1e-5);

            let scaled = estimate_moments(&s.map_outcomes(|y| y * scale).unwrap()).unwrap();
            prop_assert!((scaled.sigma1_sq - base.sigma1_sq * scale.powi(2)).abs() < 1e-8 * scale.powi(2) * (1.0 + base.sigma1_sq));
            prop_assert!((scaled.mu3_0 - base.mu3_0 * scale.powi(3)).abs() < 1e-8 * scale.powi(3) * (1.0 + base.mu3_0.abs()));
            prop_assert!((scaled.mu4_1 - base.mu4_1 * scale.powi(4)).abs() < 1e-8 * scale.powi(4) * (1.0 + base.mu4_1));
            let ate = estimate_ate_diff_means(&s);
            prop_assert!((scaled.ate() - ate * scale).abs() < 1e-9 * scale * (1.0 + ate.abs()));
        }
    }
}
