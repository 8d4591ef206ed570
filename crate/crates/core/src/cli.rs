//! Command-line front end.
//!
//! Exit codes: 0 success, 2 input or usage error, 3 numerical failure,
//! 4 when the first inference step cannot distinguish the effect from zero.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bounds::{neyman_bounds_empirical, sharp_bounds_empirical, BoundMethod, VarianceBounds};
use crate::covariance::{estimate_sigma, loadings, sigma_bootstrap, SharpIntegration, SigmaMatrix};
use crate::error::{Error, Result};
use crate::estimate::estimate_ate_diff_means;
use crate::inference::{
    plain_im_interval, two_step_from_inputs, InferenceInputs, DEFAULT_ALPHA, DEFAULT_BETA,
    DEFAULT_GRID_POINTS,
};
use crate::radius::{split_benchmark_with_null, SplitRule, DEFAULT_PERMUTATIONS};
use crate::sample::{load_mask, load_sample, ExperimentalSample};
use crate::simulation::{
    preset, run_case, run_coverage_study, write_table_csv, GaussianDGP, SimulationReport,
    StudySettings, DEFAULT_SAMPLE_SIZE,
};
use crate::solver::{estimate_robust, solve_minimax, RobustConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NO_SECOND_STEP: i32 = 4;

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::FileNotFound(_)
        | Error::Io(_)
        | Error::Parse { .. }
        | Error::Validation(_)
        | Error::Domain(_)
        | Error::InsufficientData(_)
        | Error::UnsupportedConfig(_) => EXIT_INPUT,
        Error::Convergence(_)
        | Error::Density(_)
        | Error::ZeroTau(_)
        | Error::UnsupportedRegime(_)
        | Error::Order(_)
        | Error::DegenerateSample(_) => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "dr-predict", version, about = "Distributionally robust treatment-effect prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Point estimates, variance bounds and sandwich standard errors.
    Estimate(EstimateArgs),
    /// Bound predictions over a range of radii.
    Sweep(SweepArgs),
    /// Plain and two-step confidence intervals.
    Infer(InferArgs),
    /// Monte Carlo coverage study on Gaussian designs.
    Simulate(SimulateArgs),
    /// Radius benchmarks from a two-cell split of the sample.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Outcome column.
    #[arg(long, default_value = "y")]
    pub outcome: String,
    /// Treatment column (0/1).
    #[arg(long, default_value = "t")]
    pub treatment: String,
}

#[derive(Debug, Clone, Args)]
pub struct OrderArgs {
    /// Cost-norm order p in (1, inf); sets q = p / (p - 1).
    #[arg(long, conflicts_with = "q")]
    pub p: Option<f64>,
    /// Dual penalty order q >= 1 (default 2).
    #[arg(long)]
    pub q: Option<f64>,
}

impl OrderArgs {
    fn q(&self) -> Result<f64> {
        match (self.p, self.q) {
            (Some(p), _) => Ok(RobustConfig::from_p(0.0, p)?.q),
            (None, Some(q)) => Ok(RobustConfig::new(0.0, q)?.q),
            (None, None) => Ok(2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundsArg {
    Sharp,
    Neyman,
}

impl From<BoundsArg> for BoundMethod {
    fn from(b: BoundsArg) -> Self {
        match b {
            BoundsArg::Sharp => BoundMethod::Sharp,
            BoundsArg::Neyman => BoundMethod::Neyman,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaArg {
    /// Closed form for Neyman bounds, kernel-density plug-in for sharp bounds.
    Plugin,
    /// Density-free plug-in integrated over the sample support.
    Support,
    /// Nonparametric bootstrap within arms.
    Bootstrap,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Wasserstein radius in outcome units.
    #[arg(long)]
    pub delta: f64,
    #[command(flatten)]
    pub order: OrderArgs,
    #[arg(long, value_enum, default_value = "sharp")]
    pub bounds: BoundsArg,
    #[arg(long, value_enum, default_value = "plugin")]
    pub sigma: SigmaArg,
    /// Permit q = 1 (p = inf); point estimates only.
    #[arg(long)]
    pub allow_q1: bool,
    #[arg(long, default_value_t = 500)]
    pub bootstrap_draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Emit JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// CSV file; omit for population mode.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, default_value = "t")]
    pub treatment: String,
    /// Radii as `start:stop:step` (inclusive) or a comma-separated list.
    #[arg(long, conflicts_with = "delta")]
    pub deltas: Option<String>,
    /// A single radius.
    #[arg(long)]
    pub delta: Option<f64>,
    #[command(flatten)]
    pub order: OrderArgs,
    #[arg(long, value_enum, default_value = "sharp")]
    pub bounds: BoundsArg,
    /// Population average effect (population mode).
    #[arg(long, conflicts_with = "input")]
    pub tau_star: Option<f64>,
    /// True effect variance; adds a `tau_dr` column.
    #[arg(long)]
    pub true_v: Option<f64>,
    /// Upper variance bound (population mode; defaults to --true-v).
    #[arg(long, conflicts_with = "input")]
    pub v_p: Option<f64>,
    /// Lower variance bound (population mode; defaults to --true-v).
    #[arg(long, conflicts_with = "input")]
    pub v_o: Option<f64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub delta: f64,
    #[command(flatten)]
    pub order: OrderArgs,
    #[arg(long, value_enum, default_value = "sharp")]
    pub bounds: BoundsArg,
    #[arg(long, value_enum, default_value = "plugin")]
    pub sigma: SigmaArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Level of the first-step test of a zero effect.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 500)]
    pub bootstrap_draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Built-in design(s) 1-6; repeatable.
    #[arg(long = "case", value_parser = clap::value_parser!(u8).range(1..=6))]
    pub cases: Vec<u8>,
    /// Run all six built-in designs.
    #[arg(long, conflicts_with = "cases")]
    pub all_cases: bool,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub replications: usize,
    #[arg(long, default_value_t = 20_240_601)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "sharp")]
    pub bounds: BoundsArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    /// Use the density-free covariance for sharp bounds.
    #[arg(long)]
    pub support_sigma: bool,
    /// Custom design: treated mean (requires the other design flags).
    #[arg(long, requires_all = ["mu0", "sigma1", "sigma0", "rho", "e", "delta"], conflicts_with_all = ["cases", "all_cases"])]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub sigma1: Option<f64>,
    #[arg(long)]
    pub sigma0: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub e: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[command(flatten)]
    pub order: OrderArgs,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write the reports as JSON here.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    /// Write the coverage table as CSV here.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Median,
    Halves,
    Mask,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "median")]
    pub split: SplitArg,
    /// 0/1 column defining the cells when --split mask.
    #[arg(long, required_if_eq("split", "mask"))]
    pub mask_column: Option<String>,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

/// Provenance attached to every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub version: String,
    /// Hex SHA-256 of the input file, when there is one.
    pub input_sha256: Option<String>,
}

impl RunManifest {
    fn new(command: &str, config: Value, input: Option<&Path>) -> Result<Self> {
        let input_sha256 = match input {
            Some(path) => Some(file_digest(path)?),
            None => None,
        };
        Ok(Self {
            command: command.into(),
            config,
            version: env!("CARGO_PKG_VERSION").into(),
            input_sha256,
        })
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// What a command produced.
struct Outcome {
    status: &'static str,
    exit: i32,
    json: Value,
    text: String,
}

impl Outcome {
    fn ok(json: Value, text: String) -> Self {
        Self { status: "ok", exit: EXIT_OK, json, text }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Results go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return if code == 0 { EXIT_OK } else { EXIT_INPUT };
        }
    };
    let json = match &cli.command {
        Command::Estimate(a) => a.json,
        Command::Sweep(a) => a.json,
        Command::Infer(a) => a.json,
        Command::Simulate(a) => a.json,
        Command::Benchmark(a) => a.json,
    };
    let (name, result) = match &cli.command {
        Command::Estimate(a) => ("estimate", cmd_estimate(a)),
        Command::Sweep(a) => ("sweep", cmd_sweep(a)),
        Command::Infer(a) => ("infer", cmd_infer(a)),
        Command::Simulate(a) => ("simulate", cmd_simulate(a)),
        Command::Benchmark(a) => ("benchmark", cmd_benchmark(a)),
    };
    match result {
        Ok((manifest, outcome)) => {
            let written = if json {
                let doc = json!({
                    "status": outcome.status,
                    "manifest": manifest,
                    "result": outcome.json,
                });
                writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("serializable"))
            } else {
                write!(out, "{}", outcome.text)
            };
            if written.is_err() {
                return EXIT_INPUT;
            }
            outcome.exit
        }
        Err(e) => {
            let code = exit_code(&e);
            if json {
                let doc = json!({ "status": "error", "command": name, "error": e.to_string(), "exit_code": code });
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("serializable"));
            }
            let _ = writeln!(err, "error: {e}");
            code
        }
    }
}

fn sigma_for(
    sample: &ExperimentalSample,
    method: BoundMethod,
    choice: SigmaArg,
    draws: usize,
    seed: u64,
) -> Result<SigmaMatrix> {
    match choice {
        SigmaArg::Plugin => estimate_sigma(sample, method, SharpIntegration::default()),
        SigmaArg::Support => estimate_sigma(sample, method, SharpIntegration::SupportGrid),
        SigmaArg::Bootstrap => sigma_bootstrap(sample, method, draws, seed),
    }
}

fn bounds_json(b: &VarianceBounds) -> Value {
    json!({ "v_o": b.v_o, "v_p": b.v_p })
}

fn cmd_estimate(a: &EstimateArgs) -> Result<(RunManifest, Outcome)> {
    let q = a.order.q()?;
    if q == 1.0 && !a.allow_q1 {
        return Err(Error::UnsupportedConfig(
            "q = 1 (p = inf) needs --allow-q1 and yields point estimates only".into(),
        ));
    }
    let config = RobustConfig::new(a.delta, q)?;
    let method: BoundMethod = a.bounds.into();
    let manifest = RunManifest::new(
        "estimate",
        json!({
            "delta": config.delta, "q": config.q, "bounds": method,
            "sigma": a.sigma, "outcome": a.input.outcome, "treatment": a.input.treatment,
            "bootstrap_draws": a.bootstrap_draws, "seed": a.seed,
        }),
        Some(&a.input.input),
    )?;
    let sample = load_sample(&a.input.input, &a.input.outcome, &a.input.treatment)?;
    let est = estimate_robust(&sample, &config, method)?;
    let sharp = sharp_bounds_empirical(&sample)?;
    let neyman = neyman_bounds_empirical(&sample)?;
    let n = sample.n() as f64;

    let mut warnings = Vec::new();
    let mut sigma_entries = Value::Null;
    let mut se_tau = Value::Null;
    let mut sds = (Value::Null, Value::Null);
    match sigma_for(&sample, method, a.sigma, a.bootstrap_draws, a.seed) {
        Ok(sigma) => {
            warnings.extend(sigma.warnings.iter().cloned());
            sigma_entries = json!(sigma.entries());
            se_tau = json!(sigma.tau_variance().sqrt() / n.sqrt());
            match loadings(est.tau_star, &est.bounds, est.tau_p, est.tau_o, &config) {
                Ok(l) => {
                    sds = (json!(l.sd_p(&sigma) / n.sqrt()), json!(l.sd_o(&sigma) / n.sqrt()));
                }
                Err(e) => warnings.push(format!("standard errors unavailable: {e}")),
            }
        }
        Err(e) => warnings.push(format!("covariance unavailable: {e}")),
    }

    let result = json!({
        "n": sample.n(), "n1": sample.n1(), "n0": sample.n0(),
        "delta": config.delta, "q": config.q, "bounds_method": method,
        "tau_star": est.tau_star, "se_tau_star": se_tau,
        "bounds": { "sharp": bounds_json(&sharp), "neyman": bounds_json(&neyman) },
        "tau_p": est.tau_p, "tau_o": est.tau_o,
        "se_tau_p": sds.0, "se_tau_o": sds.1,
        "sigma": sigma_entries,
        "warnings": warnings,
    });
    let fmt = |v: &Value| v.as_f64().map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
    let mut text = format!(
        "n = {} (treated {}, control {})\n\
         delta = {}, q = {}, bounds = {}\n\
         tau*    = {:.6}  (se {})\n\
         sharp   v_o = {:.6}, v_p = {:.6}\n\
         neyman  v_o = {:.6}, v_p = {:.6}\n\
         tau_p   = {:.6}  (se {})\n\
         tau_o   = {:.6}  (se {})\n",
        sample.n(), sample.n1(), sample.n0(),
        config.delta, config.q, method,
        est.tau_star, fmt(&result["se_tau_star"]),
        sharp.v_o, sharp.v_p, neyman.v_o, neyman.v_p,
        est.tau_p, fmt(&result["se_tau_p"]),
        est.tau_o, fmt(&result["se_tau_o"]),
    );
    for w in result["warnings"].as_array().into_iter().flatten() {
        text.push_str(&format!("warning: {}\n", w.as_str().unwrap_or_default()));
    }
    Ok((manifest, Outcome::ok(result, text)))
}

/// Parses `start:stop:step` (inclusive) or `a,b,c`.
pub fn parse_deltas(spec: &str) -> Result<Vec<f64>> {
    let bad = |msg: String| Error::Validation(format!("--deltas `{spec}`: {msg}"));
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")));
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step".into()));
        }
        let (start, stop, step) = (number(parts[0])?, number(parts[1])?, number(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(bad("need step > 0 and stop >= start".into()));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        if count > 1_000_000 {
            return Err(bad("more than 10^6 radii".into()));
        }
        (0..count).map(|k| start + step * k as f64).collect()
    } else {
        spec.split(',').filter(|s| !s.trim().is_empty()).map(number).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        return Err(bad("no radii".into()));
    }
    if let Some(d) = values.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(bad(format!("radius {d} must be finite and >= 0")));
    }
    Ok(values)
}

fn cmd_sweep(a: &SweepArgs) -> Result<(RunManifest, Outcome)> {
    let deltas = match (&a.deltas, a.delta) {
        (Some(spec), _) => parse_deltas(spec)?,
        (None, Some(d)) => parse_deltas(&d.to_string())?,
        (None, None) => return Err(Error::Validation("give --deltas or --delta".into())),
    };
    let q = a.order.q()?;
    let method: BoundMethod = a.bounds.into();
    let (tau_star, bounds, mode) = match (&a.input, a.tau_star) {
        (Some(path), _) => {
            let sample = load_sample(path, &a.outcome, &a.treatment)?;
            let bounds = crate::bounds::estimate_bounds(&sample, method)?;
            (estimate_ate_diff_means(&sample), bounds, "data")
        }
        (None, Some(t)) => {
            let v_p = a.v_p.or(a.true_v);
            let v_o = a.v_o.or(a.true_v);
            let (Some(v_p), Some(v_o)) = (v_p, v_o) else {
                return Err(Error::Validation(
                    "population mode needs --true-v or both --v-p and --v-o".into(),
                ));
            };
            if !(v_o >= 0.0 && v_p >= v_o) {
                return Err(Error::Validation(format!("need 0 <= v_o <= v_p (got {v_o}, {v_p})")));
            }
            (t, VarianceBounds { v_o, v_p, method }, "population")
        }
        (None, None) => {
            return Err(Error::Validation("give --input or --tau-star (population mode)".into()))
        }
    };
    if let Some(v) = a.true_v {
        if !(v >= 0.0) {
            return Err(Error::Validation(format!("--true-v {v} must be >= 0")));
        }
    }
    let manifest = RunManifest::new(
        "sweep",
        json!({
            "mode": mode, "deltas": deltas, "q": q, "bounds": method,
            "tau_star": a.tau_star, "true_v": a.true_v, "v_p": a.v_p, "v_o": a.v_o,
            "outcome": a.outcome, "treatment": a.treatment,
        }),
        a.input.as_deref(),
    )?;
    let rows = crate::solver::sweep_delta(tau_star, &bounds, q, &deltas)?;
    let mut text = String::from(if a.true_v.is_some() {
        "delta,tau_p,tau_o,tau_dr\n"
    } else {
        "delta,tau_p,tau_o\n"
    });
    let mut json_rows = Vec::with_capacity(rows.len());
    for r in &rows {
        let mut row = json!({ "delta": r.delta, "tau_p": r.tau_p, "tau_o": r.tau_o });
        if let Some(v) = a.true_v {
            let tau_dr = solve_minimax(tau_star, v, &RobustConfig::new(r.delta, q)?)?;
            row["tau_dr"] = json!(tau_dr);
            text.push_str(&format!("{},{},{},{}\n", r.delta, r.tau_p, r.tau_o, tau_dr));
        } else {
            text.push_str(&format!("{},{},{}\n", r.delta, r.tau_p, r.tau_o));
        }
        json_rows.push(row);
    }
    let result = json!({
        "mode": mode, "tau_star": tau_star, "q": q,
        "bounds": bounds_json(&bounds), "rows": json_rows,
    });
    Ok((manifest, Outcome::ok(result, text)))
}

fn cmd_infer(a: &InferArgs) -> Result<(RunManifest, Outcome)> {
    let q = a.order.q()?;
    if q <= 1.0 {
        return Err(Error::UnsupportedConfig(format!("inference needs q > 1, got {q}")));
    }
    let config = RobustConfig::new(a.delta, q)?;
    let method: BoundMethod = a.bounds.into();
    let manifest = RunManifest::new(
        "infer",
        json!({
            "delta": config.delta, "q": config.q, "bounds": method, "sigma": a.sigma,
            "alpha": a.alpha, "beta": a.beta, "grid_points": a.grid_points,
            "bootstrap_draws": a.bootstrap_draws, "seed": a.seed,
            "outcome": a.input.outcome, "treatment": a.input.treatment,
        }),
        Some(&a.input.input),
    )?;
    let sample = load_sample(&a.input.input, &a.input.outcome, &a.input.treatment)?;
    let inputs = InferenceInputs {
        estimates: estimate_robust(&sample, &config, method)?,
        sigma: sigma_for(&sample, method, a.sigma, a.bootstrap_draws, a.seed)?,
        n: sample.n(),
    };
    let two = two_step_from_inputs(&inputs, a.alpha, a.beta, a.grid_points)?;
    let est = &inputs.estimates;
    let first = two.first_step;
    let mut text = format!(
        "tau* = {:.6}, tau_p = {:.6}, tau_o = {:.6}\n\
         first step ({:.1}% interval for tau*): [{:.6}, {:.6}]\n",
        est.tau_star, est.tau_p, est.tau_o,
        100.0 * (1.0 - a.beta), first.lower, first.upper,
    );
    let Some(bonf) = two.interval else {
        text.push_str(&format!(
            "treatment effect not distinguishable from zero at level {}; no second step\n",
            a.beta
        ));
        let result = json!({
            "tau_star": est.tau_star, "tau_p": est.tau_p, "tau_o": est.tau_o,
            "first_step": first, "im": Value::Null, "im_bonferroni": Value::Null,
        });
        return Ok((
            manifest,
            Outcome { status: "no-second-step", exit: EXIT_NO_SECOND_STEP, json: result, text },
        ));
    };
    let plain = plain_im_interval(&inputs, a.alpha)?;
    text.push_str(&format!(
        "IM ({:.1}%):            [{:.6}, {:.6}]  c = {:.6}\n\
         IM-Bonferroni ({:.1}%): [{:.6}, {:.6}]  c in [{:.6}, {:.6}]\n",
        100.0 * (1.0 - a.alpha), plain.lower, plain.upper, plain.diagnostics.critical_values.0,
        100.0 * (1.0 - a.alpha), bonf.lower, bonf.upper,
        bonf.diagnostics.critical_values.0, bonf.diagnostics.critical_values.1,
    ));
    let result = json!({
        "tau_star": est.tau_star, "tau_p": est.tau_p, "tau_o": est.tau_o,
        "first_step": first, "im": plain, "im_bonferroni": bonf,
    });
    Ok((manifest, Outcome::ok(result, text)))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(RunManifest, Outcome)> {
    if let Some(t) = a.threads {
        if t == 0 {
            return Err(Error::Validation("--threads must be >= 1".into()));
        }
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let settings = StudySettings {
        replications: a.replications,
        alpha: a.alpha,
        beta: a.beta,
        method: a.bounds.into(),
        integration: if a.support_sigma {
            SharpIntegration::SupportGrid
        } else {
            SharpIntegration::default()
        },
        grid_points: a.grid_points,
        seed: a.seed,
    };
    if settings.replications < 100 {
        return Err(Error::Validation(format!(
            "--replications {} is below the minimum of 100",
            settings.replications
        )));
    }
    let custom = a.mu1.map(|mu1| -> Result<(GaussianDGP, RobustConfig)> {
        let dgp = GaussianDGP {
            mu1,
            mu0: a.mu0.unwrap_or_default(),
            sigma1: a.sigma1.unwrap_or_default(),
            sigma0: a.sigma0.unwrap_or_default(),
            rho: a.rho.unwrap_or_default(),
            e: a.e.unwrap_or_default(),
            n: a.n,
        };
        dgp.validate()?;
        Ok((dgp, RobustConfig::new(a.delta.unwrap_or_default(), a.order.q()?)?))
    });
    let cases: Vec<u8> = if a.all_cases {
        (1..=6).collect()
    } else if a.cases.is_empty() && custom.is_none() {
        return Err(Error::Validation("give --case, --all-cases or a custom design".into()));
    } else {
        a.cases.clone()
    };
    let manifest = RunManifest::new(
        "simulate",
        json!({
            "cases": cases, "n": a.n, "settings": settings,
            "custom": custom.as_ref().map(|c| c.as_ref().ok().map(|(d, r)| json!({"dgp": d, "config": r}))),
        }),
        None,
    )?;
    let mut reports: Vec<SimulationReport> = Vec::new();
    if let Some(c) = custom {
        let (dgp, config) = c?;
        reports.push(run_coverage_study(&dgp, &config, &settings)?);
    }
    for id in cases {
        reports.push(run_case(&preset(id, a.n)?, &settings)?);
    }

    let mut table = Vec::new();
    write_table_csv(&reports, &mut table)?;
    let table = String::from_utf8(table).expect("csv is utf-8");
    if let Some(path) = &a.csv_out {
        fs::write(path, &table)?;
        let sidecar = sidecar_path(path);
        fs::write(sidecar, serde_json::to_string_pretty(&manifest).expect("serializable"))?;
    }
    if let Some(path) = &a.json_out {
        let doc = json!({ "manifest": manifest, "reports": reports });
        fs::write(path, serde_json::to_string_pretty(&doc).expect("serializable"))?;
    }
    let result = json!({ "reports": reports });
    Ok((manifest, Outcome::ok(result, table)))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<(RunManifest, Outcome)> {
    let manifest = RunManifest::new(
        "benchmark",
        json!({
            "split": a.split, "mask_column": a.mask_column, "permutations": a.permutations,
            "seed": a.seed, "outcome": a.input.outcome, "treatment": a.input.treatment,
        }),
        Some(&a.input.input),
    )?;
    let sample = load_sample(&a.input.input, &a.input.outcome, &a.input.treatment)?;
    let rule = match a.split {
        SplitArg::Median => SplitRule::MedianOutcome,
        SplitArg::Halves => SplitRule::Halves,
        SplitArg::Mask => {
            let column = a.mask_column.as_deref().ok_or_else(|| {
                Error::Validation("--split mask needs --mask-column".into())
            })?;
            SplitRule::ProvidedMask(load_mask(&a.input.input, column)?)
        }
    };
    let bench = split_benchmark_with_null(&sample, &rule, a.permutations, a.seed)?;
    let null = bench.permutation_null.map_or(f64::NAN, |p| p.quantile_95);
    let text = format!(
        "split: {}\nW2(treated) = {:.6}\nW2(control) = {:.6}\njoint lower bound = {:.6}\npermutation 95% reference = {:.6}\n",
        bench.split_description, bench.w2_y1, bench.w2_y0, bench.joint_lower_bound, null,
    );
    Ok((manifest, Outcome::ok(serde_json::to_value(&bench).expect("serializable"), text)))
}
