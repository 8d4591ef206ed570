//! Bivariate Gaussian designs and a seeded Monte Carlo coverage harness.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundMethod, VarianceBounds};
use crate::covariance::SharpIntegration;
use crate::error::{Error, Result};
use crate::inference::{
    plain_im_interval, two_step_from_inputs, InferenceInputs, DEFAULT_ALPHA, DEFAULT_BETA,
    DEFAULT_GRID_POINTS,
};
use crate::sample::ExperimentalSample;
use crate::solver::{solve_minimax, RobustConfig};

pub const DEFAULT_SAMPLE_SIZE: usize = 1000;

/// `(Y(1), Y(0))` bivariate normal, treatment Bernoulli(`e`) independent of
/// the potential outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianDGP {
    pub mu1: f64,
    pub mu0: f64,
    pub sigma1: f64,
    pub sigma0: f64,
    pub rho: f64,
    pub e: f64,
    pub n: usize,
}

impl GaussianDGP {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu1, self.mu0, self.sigma1, self.sigma0, self.rho, self.e]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("design parameters must be finite".into()));
        }
        if !(self.sigma1 > 0.0 && self.sigma0 > 0.0) {
            return Err(Error::Domain("outcome standard deviations must be positive".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::Domain(format!("correlation {} outside [-1, 1]", self.rho)));
        }
        if !(self.e > 0.0 && self.e < 1.0) {
            return Err(Error::Domain(format!("assignment probability {} outside (0, 1)", self.e)));
        }
        if self.n < 2 {
            return Err(Error::Domain(format!("sample size {} must be >= 2", self.n)));
        }
        Ok(())
    }

    /// `Var(Y(1) - Y(0))`.
    pub fn effect_variance(&self) -> f64 {
        self.sigma1.powi(2) + self.sigma0.powi(2) - 2.0 * self.rho * self.sigma1 * self.sigma0
    }
}

/// A design together with its radius and penalty order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationCase {
    pub id: u8,
    pub dgp: GaussianDGP,
    pub config: RobustConfig,
}

/// The six benchmark designs. All share `rho = 0.7` and `e = 0.3`; the radius
/// is `c sigma0`.
///
/// | case | sigma1, sigma0 | mu1, mu0           | c   | p   |
/// |------|----------------|--------------------|-----|-----|
/// | 1    | 2, 1           | sigma1, 0.2 sigma0 | 0.1 | 2   |
/// | 2    | 2, 1           | sigma1, 0.2 sigma0 | 1   | 2   |
/// | 3    | 0.02, 0.01     | sigma1, 0.2 sigma0 | 1   | 2   |
/// | 4    | 20, 10         | 2, 0.2             | 0.1 | 2   |
/// | 5    | 2, 1           | sigma1, 0.2 sigma0 | 0.1 | 1.5 |
/// | 6    | 2, 1           | sigma1, 0.2 sigma0 | 0.1 | 3   |
pub fn preset(id: u8, n: usize) -> Result<SimulationCase> {
    let (s1, s0, mu1, mu0, c, p) = match id {
        1 => (2.0, 1.0, 2.0, 0.2, 0.1, 2.0),
        2 => (2.0, 1.0, 2.0, 0.2, 1.0, 2.0),
        3 => (0.02, 0.01, 0.02, 0.002, 1.0, 2.0),
        4 => (20.0, 10.0, 2.0, 0.2, 0.1, 2.0),
        5 => (2.0, 1.0, 2.0, 0.2, 0.1, 1.5),
        6 => (2.0, 1.0, 2.0, 0.2, 0.1, 3.0),
        other => {
            return Err(Error::Validation(format!("unknown case preset {other} (expected 1-6)")))
        }
    };
    let dgp = GaussianDGP { mu1, mu0, sigma1: s1, sigma0: s0, rho: 0.7, e: 0.3, n };
    dgp.validate()?;
    Ok(SimulationCase { id, dgp, config: RobustConfig::from_p(c * s0, p)? })
}

/// Population quantities implied by a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationTruth {
    pub tau_star: f64,
    /// True `Var(Y(1) - Y(0))`.
    pub v_true: f64,
    /// Sharp bounds; for Gaussian marginals they equal the Neyman bounds.
    pub bounds: VarianceBounds,
    /// Robust prediction at the true effect variance.
    pub tau_dr: f64,
    pub tau_p: f64,
    pub tau_o: f64,
}

pub fn population_truth(dgp: &GaussianDGP, config: &RobustConfig) -> Result<PopulationTruth> {
    dgp.validate()?;
    let tau_star = dgp.mu1 - dgp.mu0;
    let bounds = VarianceBounds {
        v_o: (dgp.sigma1 - dgp.sigma0).powi(2),
        v_p: (dgp.sigma1 + dgp.sigma0).powi(2),
        method: BoundMethod::Sharp,
    };
    let v_true = dgp.effect_variance().max(0.0);
    Ok(PopulationTruth {
        tau_star,
        v_true,
        bounds,
        tau_dr: solve_minimax(tau_star, v_true, config)?,
        tau_p: solve_minimax(tau_star, bounds.v_p, config)?,
        tau_o: solve_minimax(tau_star, bounds.v_o, config)?,
    })
}

/// Potential outcomes and assignments of one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Units {
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub treated: Vec<bool>,
}

impl Units {
    pub fn draw<R: Rng + ?Sized>(dgp: &GaussianDGP, rng: &mut R) -> Self {
        let tail = (1.0 - dgp.rho * dgp.rho).max(0.0).sqrt();
        let mut y1 = Vec::with_capacity(dgp.n);
        let mut y0 = Vec::with_capacity(dgp.n);
        let mut treated = Vec::with_capacity(dgp.n);
        for _ in 0..dgp.n {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            y1.push(dgp.mu1 + dgp.sigma1 * a);
            y0.push(dgp.mu0 + dgp.sigma0 * (dgp.rho * a + tail * b));
            treated.push(rng.gen_bool(dgp.e));
        }
        Self { y1, y0, treated }
    }

    /// Revealed outcomes `T Y(1) + (1 - T) Y(0)`.
    pub fn reveal(&self) -> Result<ExperimentalSample> {
        let y = self
            .treated
            .iter()
            .zip(self.y1.iter().zip(&self.y0))
            .map(|(&t, (&a, &b))| if t { a } else { b })
            .collect();
        ExperimentalSample::new(y, self.treated.clone())
    }

    fn has_both_arms(&self) -> bool {
        self.treated.iter().any(|&t| t) && self.treated.iter().any(|&t| !t)
    }
}

/// Draws a revealed sample; deterministic in `seed`.
pub fn draw_sample(dgp: &GaussianDGP, seed: u64) -> Result<ExperimentalSample> {
    dgp.validate()?;
    draw_sample_from(dgp, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draws from `rng`, retrying once if an arm comes out empty.
pub fn draw_sample_from<R: Rng + ?Sized>(dgp: &GaussianDGP, rng: &mut R) -> Result<ExperimentalSample> {
    for _ in 0..2 {
        let units = Units::draw(dgp, rng);
        if units.has_both_arms() {
            return units.reveal();
        }
    }
    Err(Error::DegenerateSample(format!(
        "an arm was empty in two consecutive draws (n = {}, e = {})",
        dgp.n, dgp.e
    )))
}

/// Settings of a coverage study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub replications: usize,
    pub alpha: f64,
    pub beta: f64,
    pub method: BoundMethod,
    pub integration: SharpIntegration,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            replications: 1000,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            method: BoundMethod::Sharp,
            integration: SharpIntegration::default(),
            grid_points: DEFAULT_GRID_POINTS,
            seed: 20_240_601,
        }
    }
}

/// Aggregated coverage results.
///
/// The two-step interval exists only when the first step rejects a zero
/// effect. Replications where it does not are dropped, and every table
/// quantity (both coverages, mean endpoints, length ratio) is averaged over
/// the retained replications so the two intervals are compared on the same
/// draws. `coverage_im_all` scores the plain interval on every completed
/// replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub case_id: Option<u8>,
    pub dgp: GaussianDGP,
    pub config: RobustConfig,
    pub settings: StudySettings,
    pub truth: PopulationTruth,
    pub completed: usize,
    /// Replications where estimation failed, with the first error seen.
    pub failed: usize,
    pub first_failure: Option<String>,
    pub retained: usize,
    pub coverage_im: f64,
    pub coverage_imbonf: f64,
    pub coverage_im_all: f64,
    pub mean_im: (f64, f64),
    pub mean_imbonf: (f64, f64),
    /// Mean of per-replication length ratios, two-step over plain.
    pub mean_length_ratio: f64,
    /// Share of retained replications whose two-step interval contains the
    /// plain one.
    pub nesting_rate: f64,
}

#[derive(Debug, Clone, Copy)]
struct ReplicationOutcome {
    im: (f64, f64),
    im_covers: bool,
    bonf: Option<(f64, f64, bool)>,
}

pub fn run_coverage_study(
    dgp: &GaussianDGP,
    config: &RobustConfig,
    settings: &StudySettings,
) -> Result<SimulationReport> {
    run_study(None, dgp, config, settings)
}

pub fn run_case(case: &SimulationCase, settings: &StudySettings) -> Result<SimulationReport> {
    run_study(Some(case.id), &case.dgp, &case.config, settings)
}

fn run_study(
    case_id: Option<u8>,
    dgp: &GaussianDGP,
    config: &RobustConfig,
    settings: &StudySettings,
) -> Result<SimulationReport> {
    if settings.replications < 100 {
        return Err(Error::Validation(format!(
            "a coverage study needs >= 100 replications, got {}",
            settings.replications
        )));
    }
    let truth = population_truth(dgp, config)?;
    let target = truth.tau_dr;
    let outcomes: Vec<Result<ReplicationOutcome>> = (0..settings.replications)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(i as u64);
            let sample = draw_sample_from(dgp, &mut rng)?;
            let inputs =
                InferenceInputs::from_sample(&sample, config, settings.method, settings.integration)?;
            let im = plain_im_interval(&inputs, settings.alpha)?;
            let two = two_step_from_inputs(&inputs, settings.alpha, settings.beta, settings.grid_points)?;
            Ok(ReplicationOutcome {
                im: (im.lower, im.upper),
                im_covers: im.contains(target),
                bonf: two.interval.map(|b| (b.lower, b.upper, b.contains(target))),
            })
        })
        .collect();

    let mut failed = 0;
    let mut first_failure = None;
    let mut done = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(r) => done.push(r),
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if done.is_empty() {
        return Err(Error::InsufficientData(format!(
            "every replication failed: {}",
            first_failure.unwrap_or_default()
        )));
    }
    let completed = done.len();
    let retained: Vec<&ReplicationOutcome> = done.iter().filter(|r| r.bonf.is_some()).collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
        if k == 0 {
            f64::NAN
        } else {
            s / k as f64
        }
    };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };

    Ok(SimulationReport {
        case_id,
        dgp: *dgp,
        config: *config,
        settings: *settings,
        truth,
        completed,
        failed,
        first_failure,
        retained: retained.len(),
        coverage_im: mean(&mut retained.iter().map(|r| flag(r.im_covers))),
        coverage_imbonf: mean(&mut retained.iter().map(|r| flag(r.bonf.unwrap().2))),
        coverage_im_all: mean(&mut done.iter().map(|r| flag(r.im_covers))),
        mean_im: (
            mean(&mut retained.iter().map(|r| r.im.0)),
            mean(&mut retained.iter().map(|r| r.im.1)),
        ),
        mean_imbonf: (
            mean(&mut retained.iter().map(|r| r.bonf.unwrap().0)),
            mean(&mut retained.iter().map(|r| r.bonf.unwrap().1)),
        ),
        mean_length_ratio: mean(&mut retained.iter().map(|r| {
            let (lo, hi, _) = r.bonf.unwrap();
            (hi - lo) / (r.im.1 - r.im.0)
        })),
        nesting_rate: mean(&mut retained.iter().map(|r| {
            let (lo, hi, _) = r.bonf.unwrap();
            flag(lo <= r.im.0 && r.im.1 <= hi)
        })),
    })
}

/// One row of the coverage table.
#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub case: String,
    pub tau_dr: f64,
    pub coverage_im: f64,
    pub coverage_imbonf: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub bonf_lo: f64,
    pub bonf_hi: f64,
    pub length_ratio: f64,
}

impl From<&SimulationReport> for TableRow {
    fn from(r: &SimulationReport) -> Self {
        Self {
            case: r.case_id.map_or_else(|| "custom".to_string(), |id| id.to_string()),
            tau_dr: r.truth.tau_dr,
            coverage_im: r.coverage_im,
            coverage_imbonf: r.coverage_imbonf,
            ci_lo: r.mean_im.0,
            ci_hi: r.mean_im.1,
            bonf_lo: r.mean_imbonf.0,
            bonf_hi: r.mean_imbonf.1,
            length_ratio: r.mean_length_ratio,
        }
    }
}

/// Writes one table row per report.
pub fn write_table_csv<W: Write>(reports: &[SimulationReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(TableRow::from(r)).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the reports as pretty-printed JSON.
pub fn write_reports_json(reports: &[SimulationReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, reports).map_err(|e| Error::Io(e.into()))?;
    w.flush()?;
    Ok(())
}
