//! Joint asymptotic covariance of `sqrt(n) (V_p, V_o, tau*)` estimates and the
//! sandwich variances of the bound predictions.
//!
//! Rows and columns are ordered `(V_p, V_o, tau*)` throughout.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{estimate_bounds, BoundMethod, VarianceBounds};
use crate::density::GaussianKde;
use crate::error::{Error, Result};
use crate::estimate::{estimate_ate_diff_means, estimate_moments, ArmMoments};
use crate::sample::{EmpiricalDistribution, ExperimentalSample};
use crate::solver::{fit_curvature, fit_term, penalty_curvature, RobustConfig};

/// Relative tolerance on the smallest eigenvalue before PSD projection.
const PSD_TOL: f64 = 1e-8;
/// Arm-variance ratio below which the Neyman delta method is ill-conditioned.
const NEAR_EQUAL_VARIANCES: f64 = 1e-3;
/// Smallest admissible `f(Q(u)) * sd` on the quantile grid.
const DENSITY_FLOOR: f64 = 1e-6;
const MIN_ARM_FOR_DENSITY: usize = 30;

const SLOT_P: usize = 0;
const SLOT_O: usize = 1;
const SLOT_TAU: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethod {
    NeymanAnalytic,
    SharpPlugin,
    Bootstrap,
}

/// Symmetric positive semidefinite 3x3 covariance, ordered `(V_p, V_o, tau*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaMatrix {
    entries: [[f64; 3]; 3],
    pub method: SigmaMethod,
    /// Non-fatal conditioning notes.
    pub warnings: Vec<String>,
}

impl SigmaMatrix {
    /// Symmetrizes `entries` and projects onto the PSD cone when the smallest
    /// eigenvalue is below `-1e-8 trace`.
    pub fn new(entries: [[f64; 3]; 3], method: SigmaMethod) -> Result<Self> {
        if entries.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("covariance has a non-finite entry".into()));
        }
        let m = Matrix3::from_fn(|i, j| 0.5 * (entries[i][j] + entries[j][i]));
        let trace = m.trace().abs();
        let eig = SymmetricEigen::new(m);
        let mut warnings = Vec::new();
        let m = if eig.eigenvalues.min() < -PSD_TOL * trace {
            warnings.push(format!(
                "projected onto PSD cone (smallest eigenvalue {:.3e})",
                eig.eigenvalues.min()
            ));
            let clipped = eig.eigenvalues.map(|l| l.max(0.0));
            let v = eig.eigenvectors;
            let r = v * Matrix3::from_diagonal(&clipped) * v.transpose();
            Matrix3::from_fn(|i, j| 0.5 * (r[(i, j)] + r[(j, i)]))
        } else {
            m
        };
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = m[(i, j)];
            }
            row[i] = row[i].max(0.0);
        }
        Ok(Self { entries: out, method, warnings })
    }

    pub fn entries(&self) -> &[[f64; 3]; 3] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    /// Asymptotic variance of `sqrt(n) tau*`.
    pub fn tau_variance(&self) -> f64 {
        self.entries[SLOT_TAU][SLOT_TAU]
    }

    /// `a' Sigma b`.
    pub fn bilinear(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += a[i] * self.entries[i][j] * b[j];
            }
        }
        acc
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = Matrix3::from_fn(|i, j| self.entries[i][j]);
        SymmetricEigen::new(m).eigenvalues.min()
    }
}

/// Closed-form covariance for the Neyman bounds `(sigma1 +/- sigma0)^2`.
///
/// The arm influence functions are supported on disjoint units, so each
/// entry is a sum of per-arm contributions.
pub fn sigma_neyman(m: &ArmMoments) -> Result<SigmaMatrix> {
    if !(m.sigma1_sq > 0.0 && m.sigma0_sq > 0.0) {
        return Err(Error::Domain(format!(
            "Neyman covariance needs positive arm variances (got {}, {})",
            m.sigma1_sq, m.sigma0_sq
        )));
    }
    let [a_p, a_o] = neyman_gradients(m);
    let e = m.e_hat;
    let var1 = (m.mu4_1 - m.sigma1_sq.powi(2)) / e;
    let var0 = (m.mu4_0 - m.sigma0_sq.powi(2)) / (1.0 - e);
    let skew1 = m.mu3_1 / e;
    let skew0 = m.mu3_0 / (1.0 - e);

    let pp = a_p[0] * a_p[0] * var1 + a_p[1] * a_p[1] * var0;
    let oo = a_o[0] * a_o[0] * var1 + a_o[1] * a_o[1] * var0;
    let po = a_p[0] * a_o[0] * var1 + a_p[1] * a_o[1] * var0;
    let pt = a_p[0] * skew1 - a_p[1] * skew0;
    let ot = a_o[0] * skew1 - a_o[1] * skew0;
    let tt = m.ate_variance();

    let mut sigma = SigmaMatrix::new(
        [[pp, po, pt], [po, oo, ot], [pt, ot, tt]],
        SigmaMethod::NeymanAnalytic,
    )?;
    let ratio = (m.sigma1_sq - m.sigma0_sq).abs() / m.sigma1_sq.max(m.sigma0_sq);
    if ratio < NEAR_EQUAL_VARIANCES {
        sigma.warnings.push(format!(
            "arm variances nearly equal (relative gap {ratio:.2e}); the lower Neyman bound is not differentiable there"
        ));
    }
    Ok(sigma)
}

/// Gradients of `(sigma1 + sigma0)^2` and `(sigma1 - sigma0)^2` with respect
/// to `(sigma1^2, sigma0^2)`.
fn neyman_gradients(m: &ArmMoments) -> [[f64; 2]; 2] {
    let (s1, s0) = (m.sigma1_sq.sqrt(), m.sigma0_sq.sqrt());
    [[1.0 + s0 / s1, 1.0 + s1 / s0], [1.0 - s0 / s1, 1.0 - s1 / s0]]
}

/// Per-unit influence values `(V_p, V_o, tau*)` of the Neyman bounds.
pub fn neyman_influence(sample: &ExperimentalSample) -> Result<Vec<[f64; 3]>> {
    let m = estimate_moments(sample)?;
    if !(m.sigma1_sq > 0.0 && m.sigma0_sq > 0.0) {
        return Err(Error::Domain("Neyman influence needs positive arm variances".into()));
    }
    let [a_p, a_o] = neyman_gradients(&m);
    let e = m.e_hat;
    let treated = sample.treated().sorted_values().iter().map(|&y| {
        let var = ((y - m.tau1).powi(2) - m.sigma1_sq) / e;
        [a_p[0] * var, a_o[0] * var, (y - m.tau1) / e]
    });
    let control = sample.control().sorted_values().iter().map(|&y| {
        let var = ((y - m.tau0).powi(2) - m.sigma0_sq) / (1.0 - e);
        [a_p[1] * var, a_o[1] * var, -(y - m.tau0) / (1.0 - e)]
    });
    Ok(treated.chain(control).collect())
}

/// How the quantile-process part of the sharp-bound influence is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SharpIntegration {
    /// Midpoint rule on a uniform `u`-grid over `[trim, 1 - trim]`, dividing
    /// by a Gaussian kernel density estimate at each quantile.
    QuantileGrid { grid_size: usize, trim: f64 },
    /// Change of variables `y = Q(u)`, integrated exactly over the sample's
    /// order statistics. Needs no density estimate.
    SupportGrid,
}

impl Default for SharpIntegration {
    fn default() -> Self {
        SharpIntegration::QuantileGrid { grid_size: 400, trim: 0.01 }
    }
}

/// Plug-in covariance for the sharp bounds with a kernel density estimate on
/// a `grid_size`-point quantile grid trimmed to `[0.01, 0.99]`.
pub fn sigma_sharp(sample: &ExperimentalSample, grid_size: usize) -> Result<SigmaMatrix> {
    sigma_sharp_with(sample, SharpIntegration::QuantileGrid { grid_size, trim: 0.01 })
}

pub fn sigma_sharp_with(
    sample: &ExperimentalSample,
    integration: SharpIntegration,
) -> Result<SigmaMatrix> {
    let influence = sharp_influence(sample, integration)?;
    sigma_from_influence(&influence, SigmaMethod::SharpPlugin)
}

/// Empirical covariance `(1/n) sum (psi - mean)(psi - mean)'`.
pub fn sigma_from_influence(influence: &[[f64; 3]], method: SigmaMethod) -> Result<SigmaMatrix> {
    if influence.is_empty() {
        return Err(Error::InsufficientData("no influence values".into()));
    }
    let n = influence.len() as f64;
    let mut mean = [0.0; 3];
    for psi in influence {
        for k in 0..3 {
            mean[k] += psi[k] / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for psi in influence {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += (psi[i] - mean[i]) * (psi[j] - mean[j]) / n;
            }
        }
    }
    SigmaMatrix::new(cov, method)
}

/// Per-unit influence values `(V_p, V_o, tau*)` of the sharp bounds.
///
/// `V_b = sigma1^2 + sigma0^2 - 2 (theta_b - tau1 tau0)` where `theta_o` and
/// `theta_p` integrate `Q1(u) Q0(u)` and `Q1(u) Q0(1 - u)`. The quantile
/// influence `-(1{Y <= Q(u)} - u) / f(Q(u))` enters `theta_b` linearly.
pub fn sharp_influence(
    sample: &ExperimentalSample,
    integration: SharpIntegration,
) -> Result<Vec<[f64; 3]>> {
    let m = estimate_moments(sample)?;
    if let SharpIntegration::QuantileGrid { grid_size, trim } = integration {
        if grid_size < 200 {
            return Err(Error::Domain(format!("quantile grid needs >= 200 points, got {grid_size}")));
        }
        if !(0.0..0.5).contains(&trim) {
            return Err(Error::Domain(format!("trim {trim} outside [0, 0.5)")));
        }
        if sample.n1() < MIN_ARM_FOR_DENSITY || sample.n0() < MIN_ARM_FOR_DENSITY {
            return Err(Error::InsufficientData(format!(
                "density estimation needs >= {MIN_ARM_FOR_DENSITY} units per arm (treated {}, control {})",
                sample.n1(),
                sample.n0()
            )));
        }
    }
    let e = m.e_hat;
    let t = sample.treated();
    let c = sample.control();
    // theta influence of each arm's own quantile process, paired with the
    // other arm's quantile function
    let (theta1_o, theta1_p) = quantile_process_terms(t, c, integration)?;
    let (theta0_o, theta0_p) = quantile_process_terms(c, t, integration)?;

    let mut out = Vec::with_capacity(sample.n());
    for (k, &y) in t.sorted_values().iter().enumerate() {
        let d = y - m.tau1;
        let var = (d * d - m.sigma1_sq) / e;
        let gamma = m.tau0 * d / e;
        out.push([
            var - 2.0 * (theta1_p[k] / e - gamma),
            var - 2.0 * (theta1_o[k] / e - gamma),
            d / e,
        ]);
    }
    for (k, &y) in c.sorted_values().iter().enumerate() {
        let d = y - m.tau0;
        let var = (d * d - m.sigma0_sq) / (1.0 - e);
        let gamma = m.tau1 * d / (1.0 - e);
        out.push([
            var - 2.0 * (theta0_p[k] / (1.0 - e) - gamma),
            var - 2.0 * (theta0_o[k] / (1.0 - e) - gamma),
            -d / (1.0 - e),
        ]);
    }
    Ok(out)
}

/// For every value `Y` of `own` (sorted order), the unscaled integrals
///
/// ```text
/// -∫ Q_other(u)     (1{Y <= Q_own(u)} - u) / f_own(Q_own(u)) du
/// -∫ Q_other(1 - u) (1{Y <= Q_own(u)} - u) / f_own(Q_own(u)) du
/// ```
///
/// The indicator is a suffix of the grid, so both reduce to suffix sums.
fn quantile_process_terms(
    own: &EmpiricalDistribution,
    other: &EmpiricalDistribution,
    integration: SharpIntegration,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let values = own.sorted_values();
    // (knot, weight, level) triples: the integrand is evaluated where the
    // indicator switches at `knot`
    let (knots, weights, levels): (Vec<f64>, Vec<f64>, Vec<f64>) = match integration {
        SharpIntegration::QuantileGrid { grid_size, trim } => {
            let kde = GaussianKde::new(own);
            if kde.bandwidth() == 0.0 {
                // a point mass has no quantile process
                return Ok((vec![0.0; values.len()], vec![0.0; values.len()]));
            }
            let sd = sd_of(own);
            let width = (1.0 - 2.0 * trim) / grid_size as f64;
            let mut knots = Vec::with_capacity(grid_size);
            let mut weights = Vec::with_capacity(grid_size);
            let mut levels = Vec::with_capacity(grid_size);
            for k in 0..grid_size {
                let u = trim + (k as f64 + 0.5) * width;
                let q = own.quantile(u)?;
                let f = kde.density(q);
                if f * sd < DENSITY_FLOOR {
                    return Err(Error::Density(format!(
                        "density {f:.3e} at quantile level {u:.4} (value {q})"
                    )));
                }
                knots.push(q);
                weights.push(width / f);
                levels.push(u);
            }
            (knots, weights, levels)
        }
        SharpIntegration::SupportGrid => {
            // on [y_(k), y_(k+1)) the empirical cdf is k/m
            let m = values.len();
            let mut knots = Vec::with_capacity(m.saturating_sub(1));
            let mut weights = Vec::with_capacity(m.saturating_sub(1));
            let mut levels = Vec::with_capacity(m.saturating_sub(1));
            for k in 1..m {
                let gap = values[k] - values[k - 1];
                if gap > 0.0 {
                    knots.push(values[k - 1]);
                    weights.push(gap);
                    levels.push(k as f64 / m as f64);
                }
            }
            (knots, weights, levels)
        }
    };

    let partner = |u: f64| other.quantile(u.clamp(f64::MIN_POSITIVE, 1.0));
    let mut co = Vec::with_capacity(knots.len());
    let mut cp = Vec::with_capacity(knots.len());
    for (&w, &u) in weights.iter().zip(&levels) {
        co.push(partner(u)? * w);
        cp.push(partner(1.0 - u)? * w);
    }
    let base_o: f64 = co.iter().zip(&levels).map(|(c, u)| c * u).sum();
    let base_p: f64 = cp.iter().zip(&levels).map(|(c, u)| c * u).sum();
    let suffix = |c: &[f64]| {
        let mut s = vec![0.0; c.len() + 1];
        for k in (0..c.len()).rev() {
            s[k] = s[k + 1] + c[k];
        }
        s
    };
    let (so, sp) = (suffix(&co), suffix(&cp));

    let mut theta_o = Vec::with_capacity(values.len());
    let mut theta_p = Vec::with_capacity(values.len());
    for &y in values {
        let k0 = knots.partition_point(|&q| q < y);
        theta_o.push(-(so[k0] - base_o));
        theta_p.push(-(sp[k0] - base_p));
    }
    Ok((theta_o, theta_p))
}

fn sd_of(dist: &EmpiricalDistribution) -> f64 {
    let v = dist.sorted_values();
    let mean = dist.mean();
    (v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Nonparametric bootstrap covariance, resampling within arms.
pub fn sigma_bootstrap(
    sample: &ExperimentalSample,
    method: BoundMethod,
    draws: usize,
    seed: u64,
) -> Result<SigmaMatrix> {
    if draws < 50 {
        return Err(Error::Domain(format!("bootstrap needs >= 50 draws, got {draws}")));
    }
    let t = sample.treated().sorted_values();
    let c = sample.control().sorted_values();
    let stats: Vec<[f64; 3]> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let bt: Vec<f64> = (0..t.len()).map(|_| t[rng.gen_range(0..t.len())]).collect();
            let bc: Vec<f64> = (0..c.len()).map(|_| c[rng.gen_range(0..c.len())]).collect();
            let s = ExperimentalSample::from_arms(&bt, &bc)?;
            let b = estimate_bounds(&s, method)?;
            Ok([b.v_p, b.v_o, estimate_ate_diff_means(&s)])
        })
        .collect::<Result<_>>()?;
    let n = sample.n() as f64;
    let scaled: Vec<[f64; 3]> = stats
        .iter()
        .map(|s| [s[0] * n.sqrt(), s[1] * n.sqrt(), s[2] * n.sqrt()])
        .collect();
    sigma_from_influence(&scaled, SigmaMethod::Bootstrap)
}

/// Covariance matching the bound method: closed form for Neyman bounds,
/// density-based plug-in for sharp bounds.
pub fn estimate_sigma(
    sample: &ExperimentalSample,
    method: BoundMethod,
    integration: SharpIntegration,
) -> Result<SigmaMatrix> {
    match method {
        BoundMethod::Neyman => sigma_neyman(&estimate_moments(sample)?),
        BoundMethod::Sharp => sigma_sharp_with(sample, integration),
    }
}

/// Derivatives of the first-order condition with respect to `(V_p, V_o,
/// tau*)`, and the objective curvature, at each bound prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loadings {
    pub d_p: [f64; 3],
    pub d_o: [f64; 3],
    /// `M''(tau_p)`.
    pub m_pp: f64,
    /// `M''(tau_o)`.
    pub m_oo: f64,
}

impl Loadings {
    /// Loadings with `tau*` held fixed.
    pub fn conditional(&self) -> Self {
        let mut out = *self;
        out.d_p[SLOT_TAU] = 0.0;
        out.d_o[SLOT_TAU] = 0.0;
        out
    }

    /// Asymptotic variance of `sqrt(n) tau_p`.
    pub fn variance_p(&self, sigma: &SigmaMatrix) -> f64 {
        sigma.bilinear(&self.d_p, &self.d_p) / (self.m_pp * self.m_pp)
    }

    /// Asymptotic variance of `sqrt(n) tau_o`.
    pub fn variance_o(&self, sigma: &SigmaMatrix) -> f64 {
        sigma.bilinear(&self.d_o, &self.d_o) / (self.m_oo * self.m_oo)
    }

    pub fn covariance_po(&self, sigma: &SigmaMatrix) -> f64 {
        sigma.bilinear(&self.d_p, &self.d_o) / (self.m_pp * self.m_oo)
    }

    pub fn sd_p(&self, sigma: &SigmaMatrix) -> f64 {
        self.variance_p(sigma).max(0.0).sqrt()
    }

    pub fn sd_o(&self, sigma: &SigmaMatrix) -> f64 {
        self.variance_o(sigma).max(0.0).sqrt()
    }
}

/// Loadings at `(tau_p, tau_o)` for the bounds `(v_p, v_o)`.
pub fn loadings(
    tau_star: f64,
    bounds: &VarianceBounds,
    tau_p: f64,
    tau_o: f64,
    config: &RobustConfig,
) -> Result<Loadings> {
    let (d_p, m_pp) = bound_loading(tau_star, bounds.v_p, tau_p, SLOT_P, config)?;
    let (d_o, m_oo) = bound_loading(tau_star, bounds.v_o, tau_o, SLOT_O, config)?;
    Ok(Loadings { d_p, d_o, m_pp, m_oo })
}

fn bound_loading(
    tau_star: f64,
    v: f64,
    tau: f64,
    slot: usize,
    config: &RobustConfig,
) -> Result<([f64; 3], f64)> {
    config.validate()?;
    if tau.abs() < 1e-10 {
        return Err(Error::ZeroTau(tau));
    }
    let a = fit_term(tau, tau_star, v);
    if a == 0.0 {
        return Err(Error::Domain(
            "objective has a kink at an unshrunk homogeneous prediction".into(),
        ));
    }
    let gap = tau_star - tau;
    let scale = gap / (a * a);
    let mut d = [0.0; 3];
    d[slot] = scale / (2.0 * a);
    d[SLOT_TAU] = scale * gap / a - 1.0 / a;
    let m = fit_curvature(tau, tau_star, v) + config.delta * penalty_curvature(tau, config.q);
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Domain(format!("curvature {m} at tau = {tau} is not positive")));
    }
    Ok((d, m))
}

/// Standard deviation of `sqrt(n) tau_b` when `tau* = 0`:
/// `sigma_tau / (1 + 1{q = 2} delta sqrt(V_b / 2))`.
pub fn zero_tau_limit_sd(sigma_tau: f64, v_b: f64, config: &RobustConfig) -> Result<f64> {
    config.validate()?;
    if config.q < 2.0 {
        return Err(Error::UnsupportedRegime(format!(
            "zero-effect limit for q = {} < 2 is not normal",
            config.q
        )));
    }
    if !(sigma_tau > 0.0 && v_b >= 0.0) {
        return Err(Error::Domain(format!(
            "need sigma_tau > 0 and V_b >= 0 (got {sigma_tau}, {v_b})"
        )));
    }
    let shrink = if config.q == 2.0 { config.delta * (v_b / 2.0).sqrt() } else { 0.0 };
    Ok(sigma_tau / (1.0 + shrink))
}
