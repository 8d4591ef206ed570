//! Experimental samples, CSV ingestion and empirical distribution functions.
//!
//! An [`ExperimentalSample`] holds one observed outcome and one binary
//! treatment indicator per unit. On construction both arms are sorted into
//! [`EmpiricalDistribution`]s, which every downstream estimator reads from.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Observed outcomes and treatment indicators drawn from the source population.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentalSample {
    outcomes: Vec<f64>,
    treatments: Vec<bool>,
    #[serde(skip)]
    treated: EmpiricalDistribution,
    #[serde(skip)]
    control: EmpiricalDistribution,
}

impl ExperimentalSample {
    /// Validates and builds a sample. Both arms must be non-empty, the vectors
    /// must have equal length `n >= 2` and every outcome must be finite.
    pub fn new(outcomes: Vec<f64>, treatments: Vec<bool>) -> Result<Self> {
        if outcomes.len() != treatments.len() {
            return Err(Error::Validation(format!(
                "outcomes ({}) and treatments ({}) differ in length",
                outcomes.len(),
                treatments.len()
            )));
        }
        if outcomes.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 observations, got {}",
                outcomes.len()
            )));
        }
        if let Some(i) = outcomes.iter().position(|y| !y.is_finite()) {
            return Err(Error::Validation(format!(
                "outcome {} at index {i} is not finite",
                outcomes[i]
            )));
        }
        let treated: Vec<f64> = outcomes
            .iter()
            .zip(&treatments)
            .filter_map(|(&y, &t)| t.then_some(y))
            .collect();
        let control: Vec<f64> = outcomes
            .iter()
            .zip(&treatments)
            .filter_map(|(&y, &t)| (!t).then_some(y))
            .collect();
        if treated.is_empty() {
            return Err(Error::Validation("treated arm is empty".into()));
        }
        if control.is_empty() {
            return Err(Error::Validation("control arm is empty".into()));
        }
        Ok(Self {
            treated: EmpiricalDistribution::from_values(treated)?,
            control: EmpiricalDistribution::from_values(control)?,
            outcomes,
            treatments,
        })
    }

    /// Builds a sample from separate treated and control outcome lists.
    pub fn from_arms(treated: &[f64], control: &[f64]) -> Result<Self> {
        let outcomes = treated.iter().chain(control).copied().collect();
        let treatments = std::iter::repeat(true)
            .take(treated.len())
            .chain(std::iter::repeat(false).take(control.len()))
            .collect();
        Self::new(outcomes, treatments)
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn treatments(&self) -> &[bool] {
        &self.treatments
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn n1(&self) -> usize {
        self.treated.len()
    }

    pub fn n0(&self) -> usize {
        self.control.len()
    }

    /// Sorted treated outcomes.
    pub fn treated(&self) -> &EmpiricalDistribution {
        &self.treated
    }

    /// Sorted control outcomes.
    pub fn control(&self) -> &EmpiricalDistribution {
        &self.control
    }

    /// Treated fraction `n1 / n`.
    pub fn treated_fraction(&self) -> f64 {
        self.n1() as f64 / self.n() as f64
    }

    /// Returns a new sample with `f` applied to every outcome.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.outcomes.iter().map(|&y| f(y)).collect(),
            self.treatments.clone(),
        )
    }
}

/// Sorted sample values with the empirical CDF and its left-continuous inverse.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Sorts `values` ascending. Ties are kept.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData(
                "empirical distribution needs at least one value".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite value in distribution".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of values `<= y`.
    pub fn cdf(&self, y: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= y) as f64 / self.len() as f64
    }

    /// `inf { y : cdf(y) >= u }` for `u` in `(0, 1]`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::Domain(format!("quantile level {u} outside (0, 1]")));
        }
        Ok(self.sorted[self.quantile_index(u)])
    }

    /// Zero-based order-statistic index `ceil(u m) - 1`, absorbing the rounding
    /// of `u` when it was computed as `k / m`.
    pub(crate) fn quantile_index(&self, u: f64) -> usize {
        let m = self.len();
        let x = u * m as f64;
        let k = (x - x * 4.0 * f64::EPSILON).ceil() as usize;
        k.clamp(1, m) - 1
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.len() as f64
    }
}

/// `empirical_cdf(dist, y)`.
pub fn empirical_cdf(dist: &EmpiricalDistribution, y: f64) -> f64 {
    dist.cdf(y)
}

/// `empirical_quantile(dist, u)`.
pub fn empirical_quantile(dist: &EmpiricalDistribution, u: f64) -> Result<f64> {
    dist.quantile(u)
}

/// Integrates `f(Q_a(u), Q_b(u))` over `u` in `(0, 1)` exactly, where `Q_a`
/// and `Q_b` are the step quantile functions of the sorted slices `a` and `b`.
///
/// The product of two step functions is constant on the merged breakpoint set
/// `{i / |a|} ∪ {j / |b|}`. Breakpoints are compared in integer units of
/// `1 / (|a| |b|)` so no segment is lost to rounding. Passing `b` reversed
/// gives the antitone pairing `Q_b(1 - u)`.
pub(crate) fn merged_quantile_integral<I>(a: &[f64], b: I, f: impl Fn(f64, f64) -> f64) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: ExactSizeIterator,
{
    let mut b = b.into_iter();
    let na = a.len() as u64;
    let nb = b.len() as u64;
    debug_assert!(na > 0 && nb > 0);
    let total = (na * nb) as f64;

    let mut i = 0u64;
    let mut j = 0u64;
    let mut pos = 0u64;
    let mut bv = b.next().expect("non-empty");
    let mut acc = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) * nb;
        let next_b = (j + 1) * na;
        let next = next_a.min(next_b);
        acc += f(a[i as usize], bv) * (next - pos) as f64;
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
            if j < nb {
                bv = b.next().expect("length matches");
            }
        }
    }
    acc / total
}

/// Reads a CSV with a header row into a validated sample.
///
/// Missing or malformed cells are hard errors naming the 1-based data row and
/// the column. Treatment cells must be the integers `0` or `1`.
pub fn load_sample(
    path: impl AsRef<Path>,
    outcome_column: &str,
    treatment_column: &str,
) -> Result<ExperimentalSample> {
    let columns = read_columns(path, &[outcome_column, treatment_column])?;
    let mut outcomes = Vec::with_capacity(columns.len());
    let mut treatments = Vec::with_capacity(columns.len());
    for (idx, row) in columns.iter().enumerate() {
        let row_no = idx + 1;
        outcomes.push(parse_real(&row[0], row_no, outcome_column)?);
        treatments.push(parse_binary(&row[1], row_no, treatment_column)?);
    }
    ExperimentalSample::new(outcomes, treatments)
}

/// Reads a 0/1 column (for example a split mask) from the same CSV layout.
pub fn load_mask(path: impl AsRef<Path>, column: &str) -> Result<Vec<bool>> {
    read_columns(path, &[column])?
        .iter()
        .enumerate()
        .map(|(idx, row)| parse_binary(&row[0], idx + 1, column))
        .collect()
}

fn read_columns(path: impl AsRef<Path>, names: &[&str]) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let indices = names
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| {
                Error::Validation(format!("column `{name}` not found in header"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: idx + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        rows.push(
            indices
                .iter()
                .map(|&c| record.get(c).unwrap_or("").to_string())
                .collect(),
        );
    }
    Ok(rows)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            row: 0,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

fn parse_real(cell: &str, row: usize, column: &str) -> Result<f64> {
    if cell.is_empty() {
        return Err(Error::Parse {
            row,
            column: column.into(),
            message: "missing value".into(),
        });
    }
    let y: f64 = cell.parse().map_err(|_| Error::Parse {
        row,
        column: column.into(),
        message: format!("`{cell}` is not a real number"),
    })?;
    if !y.is_finite() {
        return Err(Error::Validation(format!(
            "row {row}, column `{column}`: outcome {y} is not finite"
        )));
    }
    Ok(y)
}

fn parse_binary(cell: &str, row: usize, column: &str) -> Result<bool> {
    if cell.is_empty() {
        return Err(Error::Parse {
            row,
            column: column.into(),
            message: "missing value".into(),
        });
    }
    let t: i64 = cell.parse().map_err(|_| Error::Parse {
        row,
        column: column.into(),
        message: format!("`{cell}` is not an integer"),
    })?;
    match t {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::Validation(format!(
            "row {row}, column `{column}`: treatment {other} not in {{0, 1}}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use proptest::prelude::*;

    use super::*;

    fn dist(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::from_values(v.to_vec()).unwrap()
    }

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn cdf_examples() {
        let d = dist(&[1.0, 2.0, 3.0]);
        assert_eq!(d.cdf(2.0), 2.0 / 3.0);
        assert_eq!(d.cdf(0.0), 0.0);
        assert_eq!(d.cdf(3.0), 1.0);
    }

    #[test]
    fn quantile_examples() {
        let d = dist(&[3.0, 1.0, 2.0]);
        assert_eq!(d.quantile(0.5).unwrap(), 2.0);
        assert_eq!(d.quantile(1.0).unwrap(), 3.0);
        let single = dist(&[5.0]);
        for u in [1e-9, 0.3, 1.0] {
            assert_eq!(single.quantile(u).unwrap(), 5.0);
        }
        assert!(matches!(d.quantile(0.0), Err(Error::Domain(_))));
        assert!(matches!(d.quantile(1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn quantile_at_exact_breakpoints() {
        let d = dist(&(0..10).map(f64::from).collect::<Vec<_>>());
        // 0.3 * 10 rounds above 3 in binary floating point
        assert_eq!(d.quantile(0.3).unwrap(), 2.0);
        for k in 1..=10 {
            assert_eq!(d.quantile(k as f64 / 10.0).unwrap(), (k - 1) as f64);
        }
    }

    #[test]
    fn sample_validation() {
        let s = ExperimentalSample::new(vec![1.0, 0.5], vec![true, false]).unwrap();
        assert_eq!((s.n(), s.n1(), s.n0()), (2, 1, 1));
        assert!(matches!(
            ExperimentalSample::new(vec![1.0, 2.0], vec![true, true]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            ExperimentalSample::new(vec![f64::NAN, 2.0], vec![true, false]),
            Err(Error::Validation(_))
        ));
        assert!(ExperimentalSample::new(vec![1.0], vec![true]).is_err());
    }

    #[test]
    fn load_minimal_csv() {
        let f = write_csv("y,t\n1.0,1\n0.5,0\n");
        let s = load_sample(f.path(), "y", "t").unwrap();
        assert_eq!((s.n(), s.n1(), s.n0()), (2, 1, 1));
        assert_eq!(s.outcomes(), &[1.0, 0.5]);
    }

    #[test]
    fn load_rejects_empty_control_arm() {
        let f = write_csv("y,t\n1.0,1\n0.5,1\n");
        let err = load_sample(f.path(), "y", "t").unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("control")));
    }

    #[test]
    fn load_reports_malformed_row() {
        let f = write_csv("y,t\n1.0,1\nabc,0\n");
        match load_sample(f.path(), "y", "t").unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn load_rejects_missing_cells_and_bad_treatments() {
        let f = write_csv("y,t\n1.0,1\n,0\n");
        assert!(matches!(
            load_sample(f.path(), "y", "t"),
            Err(Error::Parse { row: 2, .. })
        ));
        let f = write_csv("y,t\n1.0,1\n2.0,2\n");
        assert!(matches!(
            load_sample(f.path(), "y", "t"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            load_sample("/definitely/not/here.csv", "y", "t"),
            Err(Error::FileNotFound(_))
        ));
        let f = write_csv("y,t\n1.0,1\n");
        assert!(matches!(
            load_sample(f.path(), "y", "treat"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn merged_integral_matches_pairing_for_equal_sizes() {
        let a = [1.0, 2.0, 4.0];
        let b = [0.5, 3.0, 7.0];
        let got = merged_quantile_integral(&a, b.iter().copied(), |x, y| x * y);
        assert!((got - (0.5 + 6.0 + 28.0) / 3.0).abs() < 1e-14);
        let rev = merged_quantile_integral(&a, b.iter().rev().copied(), |x, y| x * y);
        assert!((rev - (7.0 + 6.0 + 2.0) / 3.0).abs() < 1e-14);
    }

    #[test]
    fn merged_integral_unequal_sizes() {
        // Q_a: 1 on (0,1/2], 3 on (1/2,1]; Q_b: 10, 20, 30 on thirds.
        let a = [1.0, 3.0];
        let b = [10.0, 20.0, 30.0];
        let got = merged_quantile_integral(&a, b.iter().copied(), |x, y| x * y);
        let expect = (1.0 * 10.0 + 1.0 * 20.0 * 0.5 + 3.0 * 20.0 * 0.5 + 3.0 * 30.0) / 3.0;
        assert!((got - expect).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn galois_pair_and_monotonicity(
            values in prop::collection::vec(-100.0f64..100.0, 1..40),
            us in prop::collection::vec(1e-6f64..=1.0, 2),
        ) {
            let d = dist(&values);
            for &u in &us {
                let q = d.quantile(u).unwrap();
                prop_assert!(d.cdf(q) >= u - 1e-12);
            }
            for &y in &values {
                prop_assert!(d.quantile(d.cdf(y)).unwrap() <= y);
            }
            let (lo, hi) = if us[0] <= us[1] { (us[0], us[1]) } else { (us[1], us[0]) };
            prop_assert!(d.quantile(lo).unwrap() <= d.quantile(hi).unwrap());
            prop_assert!(d.cdf(lo * 50.0 - 25.0) <= d.cdf(hi * 50.0 - 25.0));
        }

        #[test]
        fn arms_partition_the_sample(
            rows in prop::collection::vec((-10.0f64..10.0, any::<bool>()), 2..50)
        ) {
            let (y, t): (Vec<f64>, Vec<bool>) = rows.into_iter().unzip();
            if let Ok(s) = ExperimentalSample::new(y, t) {
                prop_assert_eq!(s.n1() + s.n0(), s.n());
            }
        }
    }
}
