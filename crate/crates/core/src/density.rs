//! Gaussian kernel density estimation with Silverman's rule-of-thumb bandwidth.

use crate::sample::EmpiricalDistribution;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `0.9 min(sd, IQR / 1.34) m^(-1/5)`, falling back to the standard
/// deviation when the interquartile range is zero. Zero only for a constant
/// sample.
pub fn silverman_bandwidth(dist: &EmpiricalDistribution) -> f64 {
    let v = dist.sorted_values();
    let m = v.len() as f64;
    let mean = dist.mean();
    let sd = (v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / m).sqrt();
    let iqr = dist.quantile(0.75).unwrap_or(0.0) - dist.quantile(0.25).unwrap_or(0.0);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * m.powf(-0.2)
}

/// Gaussian kernel density estimate of one sample.
#[derive(Debug, Clone)]
pub struct GaussianKde<'a> {
    values: &'a [f64],
    bandwidth: f64,
}

impl<'a> GaussianKde<'a> {
    pub fn new(dist: &'a EmpiricalDistribution) -> Self {
        Self {
            values: dist.sorted_values(),
            bandwidth: silverman_bandwidth(dist),
        }
    }

    pub fn with_bandwidth(dist: &'a EmpiricalDistribution, bandwidth: f64) -> Self {
        Self { values: dist.sorted_values(), bandwidth }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Density at `y`. Kernels farther than 40 bandwidths contribute below
    /// double precision and are skipped via the sorted order.
    pub fn density(&self, y: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.values.partition_point(|&v| v < y - 40.0 * h);
        let hi = self.values.partition_point(|&v| v <= y + 40.0 * h);
        let sum: f64 = self.values[lo..hi]
            .iter()
            .map(|&v| {
                let z = (y - v) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        sum * INV_SQRT_2PI / (self.values.len() as f64 * h)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    #[test]
    fn bandwidth_of_constant_sample_is_zero() {
        let d = EmpiricalDistribution::from_values(vec![3.0; 10]).unwrap();
        assert_eq!(silverman_bandwidth(&d), 0.0);
    }

    #[test]
    fn bandwidth_scales_with_data() {
        let d = EmpiricalDistribution::from_values((0..100).map(f64::from).collect()).unwrap();
        let s = EmpiricalDistribution::from_values((0..100).map(|k| 5.0 * k as f64).collect())
            .unwrap();
        assert!((silverman_bandwidth(&s) - 5.0 * silverman_bandwidth(&d)).abs() < 1e-9);
    }

    #[test]
    fn recovers_gaussian_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(1.0, 2.0).unwrap();
        let d = EmpiricalDistribution::from_values(
            (0..50_000).map(|_| normal.sample(&mut rng)).collect(),
        )
        .unwrap();
        let kde = GaussianKde::new(&d);
        for y in [-1.0, 1.0, 3.0] {
            let z: f64 = (y - 1.0) / 2.0;
            let truth = INV_SQRT_2PI / 2.0 * (-0.5 * z * z).exp();
            assert!((kde.density(y) - truth).abs() < 0.03 * truth, "y {y}");
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let d = EmpiricalDistribution::from_values(vec![0.0, 0.5, 2.0, 2.1, 7.0]).unwrap();
        let kde = GaussianKde::new(&d);
        let h = kde.bandwidth();
        let (lo, hi) = (-10.0 * h - 1.0, 7.0 + 10.0 * h + 1.0);
        let steps = 200_000;
        let dx = (hi - lo) / steps as f64;
        let total: f64 = (0..steps).map(|k| kde.density(lo + (k as f64 + 0.5) * dx) * dx).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
