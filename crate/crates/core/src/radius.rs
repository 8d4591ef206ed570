//! Benchmarks for choosing the Wasserstein radius.
//!
//! Splitting the source sample into two cells and measuring how far apart
//! the cells' outcome distributions are gives a sense of scale for `delta`.
//! Distances are computed per arm; by the marginal lower bound for the
//! squared-Euclidean cost, `sqrt(W2(Y1)^2 + W2(Y0)^2)` bounds the joint
//! distance from below.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{merged_quantile_integral, EmpiricalDistribution, ExperimentalSample};

pub const DEFAULT_PERMUTATIONS: usize = 200;

/// `sqrt(∫ (Q_a(u) - Q_b(u))^2 du)`, exact for empirical distributions.
pub fn wasserstein2_1d(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    merged_quantile_integral(a.sorted_values(), b.sorted_values().iter().copied(), |x, y| {
        (x - y) * (x - y)
    })
    .max(0.0)
    .sqrt()
}

/// How to divide a sample into two cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Outcomes at or below the pooled median versus above it.
    MedianOutcome,
    /// First `floor(n / 2)` rows versus the rest.
    Halves,
    /// `true` rows versus `false` rows.
    ProvidedMask(Vec<bool>),
}

impl SplitRule {
    pub fn describe(&self) -> String {
        match self {
            SplitRule::MedianOutcome => "outcome <= pooled median vs > median".into(),
            SplitRule::Halves => "first half of rows vs second half".into(),
            SplitRule::ProvidedMask(_) => "mask true vs mask false".into(),
        }
    }

    fn labels(&self, sample: &ExperimentalSample) -> Result<Vec<bool>> {
        let y = sample.outcomes();
        match self {
            SplitRule::MedianOutcome => {
                let pooled = EmpiricalDistribution::from_values(y.to_vec())?;
                let median = pooled.quantile(0.5)?;
                Ok(y.iter().map(|&v| v <= median).collect())
            }
            SplitRule::Halves => Ok((0..y.len()).map(|i| i < y.len() / 2).collect()),
            SplitRule::ProvidedMask(mask) => {
                if mask.len() != y.len() {
                    return Err(Error::Validation(format!(
                        "mask has {} rows but the sample has {}",
                        mask.len(),
                        y.len()
                    )));
                }
                Ok(mask.clone())
            }
        }
    }
}

/// Upper 95% point of the benchmark when cell labels are exchangeable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationNull {
    pub permutations: usize,
    pub seed: u64,
    pub quantile_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusBenchmark {
    pub w2_y1: f64,
    pub w2_y0: f64,
    /// `sqrt(w2_y1^2 + w2_y0^2)`.
    pub joint_lower_bound: f64,
    pub split_description: String,
    pub permutation_null: Option<PermutationNull>,
}

/// Per-arm distances between the two cells of `rule`.
pub fn split_benchmark(sample: &ExperimentalSample, rule: &SplitRule) -> Result<RadiusBenchmark> {
    let labels = rule.labels(sample)?;
    let (w2_y1, w2_y0) = cell_distances(sample, &labels)?;
    Ok(RadiusBenchmark {
        w2_y1,
        w2_y0,
        joint_lower_bound: w2_y1.hypot(w2_y0),
        split_description: rule.describe(),
        permutation_null: None,
    })
}

/// [`split_benchmark`] plus a permutation reference: cell labels are shuffled
/// within each arm, preserving cell sizes, and the joint bound recomputed.
pub fn split_benchmark_with_null(
    sample: &ExperimentalSample,
    rule: &SplitRule,
    permutations: usize,
    seed: u64,
) -> Result<RadiusBenchmark> {
    if permutations < 20 {
        return Err(Error::Domain(format!("need >= 20 permutations, got {permutations}")));
    }
    let mut bench = split_benchmark(sample, rule)?;
    let labels = rule.labels(sample)?;
    let treated = sample.treatments();
    let (idx1, idx0): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| treated[i]);
    let mut null: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut shuffled = labels.clone();
            for idx in [&idx1, &idx0] {
                let mut arm: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
                arm.shuffle(&mut rng);
                for (&i, l) in idx.iter().zip(arm) {
                    shuffled[i] = l;
                }
            }
            let (a, b) = cell_distances(sample, &shuffled)?;
            Ok(a.hypot(b))
        })
        .collect::<Result<_>>()?;
    null.sort_by(f64::total_cmp);
    let rank = ((0.95 * permutations as f64).ceil() as usize).clamp(1, permutations) - 1;
    bench.permutation_null = Some(PermutationNull { permutations, seed, quantile_95: null[rank] });
    Ok(bench)
}

fn cell_distances(sample: &ExperimentalSample, labels: &[bool]) -> Result<(f64, f64)> {
    let mut cells: [[Vec<f64>; 2]; 2] = Default::default();
    for ((&y, &t), &l) in sample.outcomes().iter().zip(sample.treatments()).zip(labels) {
        cells[usize::from(t)][usize::from(l)].push(y);
    }
    let mut w = [0.0; 2];
    for (arm, [out, inside]) in cells.into_iter().enumerate() {
        let name = if arm == 1 { "treated" } else { "control" };
        if out.len() < 2 || inside.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "each cell needs >= 2 {name} units (got {} and {})",
                inside.len(),
                out.len()
            )));
        }
        let a = EmpiricalDistribution::from_values(inside)?;
        let b = EmpiricalDistribution::from_values(out)?;
        w[arm] = wasserstein2_1d(&a, &b);
    }
    Ok((w[1], w[0]))
}

/// Squared-radius share spent moving potential outcomes in the worst case,
/// `2 delta^2 / (2 + tau^2)`; derived for `q = 2`.
pub fn shift_decomposition(tau: f64, delta: f64, q: f64) -> Result<f64> {
    if q != 2.0 {
        return Err(Error::UnsupportedConfig(format!(
            "shift decomposition is derived for q = 2, got q = {q}"
        )));
    }
    if !(delta >= 0.0 && delta.is_finite()) || !tau.is_finite() {
        return Err(Error::Domain(format!("need finite tau and delta >= 0 (got {tau}, {delta})")));
    }
    Ok(2.0 * delta * delta / (2.0 + tau * tau))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn dist(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let a = dist(&[0.0, 1.0, 5.0]);
        assert_eq!(wasserstein2_1d(&a, &a), 0.0);
        let shifted = dist(&[2.5, 3.5, 7.5]);
        assert!((wasserstein2_1d(&a, &shifted) - 2.5).abs() < 1e-12);
        // unequal sizes: {0, 1} vs {0, 0, 1, 1} share a quantile function
        assert_eq!(wasserstein2_1d(&dist(&[0.0, 1.0]), &dist(&[0.0, 0.0, 1.0, 1.0])), 0.0);
        // {0} vs {0, 3}: half the mass moves by 3
        assert!((wasserstein2_1d(&dist(&[0.0]), &dist(&[0.0, 3.0])) - 4.5f64.sqrt()).abs() < 1e-12);
    }

    fn cluster_sample(seed: u64, sep: f64) -> ExperimentalSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut d = Vec::new();
        for i in 0..400 {
            let base = if i % 2 == 0 { 0.0 } else { sep };
            y.push(base + rng.gen_range(-0.1..0.1));
            d.push(i % 4 < 2);
        }
        ExperimentalSample::new(y, d).unwrap()
    }

    #[test]
    fn median_split_recovers_cluster_gap() {
        let b = split_benchmark(&cluster_sample(1, 10.0), &SplitRule::MedianOutcome).unwrap();
        assert!((b.w2_y1 - 10.0).abs() < 0.2 && (b.w2_y0 - 10.0).abs() < 0.2);
        assert!((b.joint_lower_bound.powi(2) - b.w2_y1.powi(2) - b.w2_y0.powi(2)).abs() < 1e-10);
    }

    #[test]
    fn homogeneous_halves_sit_below_permutation_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..600).map(|_| rng.gen_range(0.0..1.0)).collect();
        let d: Vec<bool> = (0..600).map(|_| rng.gen_bool(0.4)).collect();
        let s = ExperimentalSample::new(y, d).unwrap();
        let b = split_benchmark_with_null(&s, &SplitRule::Halves, 200, 9).unwrap();
        let null = b.permutation_null.unwrap();
        assert!(b.joint_lower_bound <= null.quantile_95 * 1.5);
        assert!(null.quantile_95 < 0.2);
        let again = split_benchmark_with_null(&s, &SplitRule::Halves, 200, 9).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn cells_need_two_units_per_arm() {
        let s = ExperimentalSample::new(
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![true, false, false, true, true, false, false],
        )
        .unwrap();
        assert!(matches!(
            split_benchmark(&s, &SplitRule::Halves),
            Err(Error::InsufficientData(_))
        ));
        let mask = vec![true, true, true, false, false, false, false];
        assert!(matches!(
            split_benchmark(&s, &SplitRule::ProvidedMask(mask)),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            split_benchmark(&s, &SplitRule::ProvidedMask(vec![true])),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn shift_decomposition_examples() {
        assert_eq!(shift_decomposition(0.0, 1.5, 2.0).unwrap(), 2.25);
        assert!((shift_decomposition(2f64.sqrt(), 1.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(shift_decomposition(1e8, 1.0, 2.0).unwrap() < 1e-15);
        assert!(matches!(shift_decomposition(1.0, 1.0, 3.0), Err(Error::UnsupportedConfig(_))));
        assert!(shift_decomposition(1.0, -1.0, 2.0).is_err());
    }

    fn values() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 1..40)
    }

    proptest! {
        #[test]
        fn metric_axioms(a in values(), b in values(), c in values()) {
            let (a, b, c) = (dist(&a), dist(&b), dist(&c));
            prop_assert_eq!(wasserstein2_1d(&a, &b), wasserstein2_1d(&b, &a));
            prop_assert!(
                wasserstein2_1d(&a, &c) <= wasserstein2_1d(&a, &b) + wasserstein2_1d(&b, &c) + 1e-10
            );
            prop_assert_eq!(wasserstein2_1d(&a, &a.clone()), 0.0);
        }

        #[test]
        fn sorted_pairing_for_equal_sizes(pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..60)) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (a, b) = (dist(&x), dist(&y));
            let oracle = (a.sorted_values().iter().zip(b.sorted_values())
                .map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
            prop_assert!((wasserstein2_1d(&a, &b) - oracle).abs() <= 1e-10 * (1.0 + oracle));
        }

        #[test]
        fn scales_and_translates(a in values(), b in values(), s in -5.0f64..5.0, c in -20.0f64..20.0) {
            let base = wasserstein2_1d(&dist(&a), &dist(&b));
            let scaled = wasserstein2_1d(
                &dist(&a.iter().map(|v| v * s).collect::<Vec<_>>()),
                &dist(&b.iter().map(|v| v * s).collect::<Vec<_>>()),
            );
            prop_assert!((scaled - s.abs() * base).abs() <= 1e-9 * (1.0 + base));
            let moved = wasserstein2_1d(&dist(&a), &dist(&a.iter().map(|v| v + c).collect::<Vec<_>>()));
            prop_assert!((moved - c.abs()).abs() <= 1e-10 * (1.0 + c.abs()) * 100.0);
        }

        #[test]
        fn shift_share_is_decreasing_and_quadratic(t1 in 0.0f64..10.0, dt in 0.0f64..10.0, d in 0.0f64..5.0) {
            let a = shift_decomposition(t1, d, 2.0).unwrap();
            let b = shift_decomposition(-(t1 + dt), d, 2.0).unwrap();
            prop_assert!(b <= a);
            prop_assert!(a <= d * d + 1e-15);
            let doubled = shift_decomposition(t1, 2.0 * d, 2.0).unwrap();
            prop_assert!((doubled - 4.0 * a).abs() <= 1e-12 * (1.0 + a));
        }
    }
}
