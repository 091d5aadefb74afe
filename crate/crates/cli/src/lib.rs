//! Command-line front end for the `smallarea` estimator.
//!
//! Subcommands:
//!
//! - `fit`: adjusted-ML fit of the small sample.
//! - `predict`: EBP and direct estimates for every big-sample area.
//! - `bootstrap`: estimates plus parametric-bootstrap MSPE, SE and CV.
//! - `simulate`: write a synthetic world as CSV files.
//! - `evaluate`: ASD, RASD and AAD of an estimate column against truths.

pub mod error;
pub mod ingest;
pub mod output;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use smallarea::bootstrap::{apply_mspe, bootstrap_mspe};
use smallarea::em::initial_params;
use smallarea::model::AreaGrouped;
use smallarea::predict::{EstimateTable, PredictConfig};
use smallarea::sim::{evaluate, simulate, SimDesign};
use smallarea::{
    em_fit, estimate_all, AdjustmentConfig, BetaOptimizer, BootstrapConfig, EmConfig, FitResult, L1Variant,
};

pub use error::CliError;
use ingest::{check_compatible, ingest_big, ingest_small, read_column, weight_report};
use output::{envelope, write_text};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "SMALLAREA_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "smallarea",
    version,
    about = "Small-area proportion estimation by data integration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the mixed logistic model to the small sample.
    Fit(FitArgs),
    /// Impute EBPs onto the big sample and aggregate by area.
    Predict(PredictArgs),
    /// Estimates with parametric-bootstrap MSPE.
    Bootstrap(BootstrapArgs),
    /// Generate a synthetic small sample, big sample and truths.
    Simulate(SimulateArgs),
    /// Compare an estimate column with truths.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum L1Arg {
    PaperForm,
    StandardForm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    NelderMead,
    QuasiNewton,
    BoundedQuasiNewtonParallel,
}

#[derive(Debug, Clone, Args)]
pub struct FitOptions {
    /// Monte-Carlo draws per area per EM iteration.
    #[arg(long, default_value_t = 100)]
    pub r_draws: usize,
    /// EM stops when every parameter moves less than this.
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = L1Arg::PaperForm)]
    pub l1_variant: L1Arg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::BoundedQuasiNewtonParallel)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-6)]
    pub sigma2_min: f64,
    #[arg(long, default_value_t = 25.0)]
    pub sigma2_max: f64,
}

impl FitOptions {
    fn em_config(&self, seed: u64) -> EmConfig {
        EmConfig {
            r_draws: self.r_draws,
            tol: self.tol,
            max_iter: self.max_iter,
            seed,
            beta_optimizer: match self.optimizer {
                OptimizerArg::NelderMead => BetaOptimizer::NelderMead,
                OptimizerArg::QuasiNewton => BetaOptimizer::QuasiNewton,
                OptimizerArg::BoundedQuasiNewtonParallel => BetaOptimizer::BoundedQuasiNewtonParallel,
            },
        }
    }

    fn adj_config(&self) -> AdjustmentConfig {
        AdjustmentConfig {
            sigma2_min: self.sigma2_min,
            sigma2_max: self.sigma2_max,
            l1_variant: match self.l1_variant {
                L1Arg::PaperForm => L1Variant::PaperForm,
                L1Arg::StandardForm => L1Variant::StandardForm,
            },
            ..AdjustmentConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub small: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(flatten)]
    pub options: FitOptions,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub small: PathBuf,
    #[arg(long)]
    pub big: PathBuf,
    /// Fit written by `fit`; without it the model is refitted (needs --seed).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `area,truth` file; adds an `actual` column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Accept a fit that did not converge.
    #[arg(long)]
    pub allow_unconverged: bool,
    #[arg(long, default_value_t = 20)]
    pub quadrature_order: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(flatten)]
    pub options: FitOptions,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub small: PathBuf,
    #[arg(long)]
    pub big: PathBuf,
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub b_replicates: usize,
    /// Keep replicates whose refit did not converge.
    #[arg(long)]
    pub keep_failures: bool,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub allow_unconverged: bool,
    #[arg(long, default_value_t = 20)]
    pub quadrature_order: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(flatten)]
    pub options: FitOptions,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON design file.
    #[arg(long)]
    pub design: PathBuf,
    /// Overrides the design's seed.
    #[arg(long)]
    pub seed: u64,
    /// Output directory for small.csv, big.csv, truth.csv and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimates table with an `area` column.
    #[arg(long)]
    pub estimates: PathBuf,
    /// `area,truth` file.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = "ebp")]
    pub column: String,
    /// Second column reported as the baseline for relative gains.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

/// Cap the global thread pool from [`THREADS_ENV`] when set.
pub fn configure_threads() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
        // A pool may already exist when running inside tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Predict(a) => run_predict(a),
        Command::Bootstrap(a) => run_bootstrap(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Evaluate(a) => run_evaluate(a),
    }
}

fn fit_config_json(em: &EmConfig, adj: &AdjustmentConfig) -> Value {
    json!({ "em": em, "adjustment": adj })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn warn(message: &str) {
    eprintln!("warning: {message}");
}

fn fit_small(small: &smallarea::SmallSample, em: &EmConfig, adj: &AdjustmentConfig) -> Result<FitResult, CliError> {
    let init = initial_params(small, em, adj)?;
    let fit = em_fit(small, &init, em, adj)?;
    if !fit.converged {
        warn(&format!("EM did not converge within {} iterations", fit.iterations));
    }
    if fit.boundary_flag {
        warn("sigma2 estimate lies on a bound");
    }
    Ok(fit)
}

fn load_fit(path: &Path) -> Result<FitResult, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path_str(path),
        source: e,
    })?;
    let doc: Value = serde_json::from_str(&text)?;
    let result = doc.get("result").cloned().unwrap_or(doc);
    Ok(serde_json::from_value(result)?)
}

fn require_converged(fit: &FitResult, allow: bool) -> Result<(), CliError> {
    if !fit.converged && !allow {
        return Err(smallarea::Error::NonConvergence {
            iterations: fit.iterations,
            last: fit.params.beta.clone(),
        }
        .into());
    }
    Ok(())
}

fn run_fit(a: FitArgs) -> Result<(), CliError> {
    let small = ingest_small(&a.small)?;
    let em = a.options.em_config(a.seed);
    let adj = a.options.adj_config();
    let fit = fit_small(&small.sample, &em, &adj)?;
    let text = match a.format {
        Format::Json => {
            let mut config = fit_config_json(&em, &adj);
            config["small"] = json!(path_str(&a.small));
            config["covariates"] = json!(small.covariates);
            envelope("fit", Some(a.seed), config, &fit)?
        }
        Format::Csv => posteriors_csv(&fit)?,
    };
    write_text(a.out.as_deref(), &text)
}

fn posteriors_csv(fit: &FitResult) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut write = || -> csv::Result<()> {
        w.write_record(["area", "v_hat", "tau2_hat", "n_tilde", "clipped"])?;
        for p in &fit.posteriors {
            w.write_record([
                p.area.clone(),
                p.v_hat.to_string(),
                p.tau2_hat.to_string(),
                p.n_tilde.to_string(),
                p.clipped.to_string(),
            ])?;
        }
        Ok(())
    };
    write().map_err(|e| CliError::Input(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Input(e.to_string()))
}

/// Truth values aligned with the estimates.
fn aligned_truth(path: &Path, table: &EstimateTable) -> Result<Vec<Option<f64>>, CliError> {
    let truths: HashMap<String, Option<f64>> = read_column(path, "truth")?.into_iter().collect();
    Ok(table
        .estimates
        .iter()
        .map(|e| truths.get(&e.area).copied().flatten())
        .collect())
}

#[derive(Serialize)]
struct PredictOutput<'a> {
    estimates: &'a [smallarea::AreaEstimate],
    #[serde(skip_serializing_if = "Option::is_none")]
    actual: Option<&'a [Option<f64>]>,
    warnings: &'a [String],
    raw_weight_sums: Vec<(String, f64)>,
}

struct Prepared {
    small: ingest::Ingested<smallarea::SmallSample>,
    big: ingest::Ingested<smallarea::BigSample>,
    fit: FitResult,
    config: Value,
}

#[allow(clippy::too_many_arguments)]
fn prepare(
    small_path: &Path,
    big_path: &Path,
    fit_path: Option<&Path>,
    seed: Option<u64>,
    options: &FitOptions,
    allow_unconverged: bool,
) -> Result<Prepared, CliError> {
    let small = ingest_small(small_path)?;
    let big = ingest_big(big_path)?;
    check_compatible(&small, &big)?;
    let em = options.em_config(seed.unwrap_or(0));
    let adj = options.adj_config();
    let fit = match (fit_path, seed) {
        (Some(p), _) => load_fit(p)?,
        (None, Some(_)) => fit_small(&small.sample, &em, &adj)?,
        (None, None) => {
            return Err(CliError::Usage(
                "refitting needs --seed (or pass --fit with a saved fit)".into(),
            ))
        }
    };
    require_converged(&fit, allow_unconverged)?;
    let mut config = fit_config_json(&em, &adj);
    config["small"] = json!(path_str(small_path));
    config["big"] = json!(path_str(big_path));
    config["fit"] = json!(fit_path.map(path_str));
    config["covariates"] = json!(small.covariates);
    Ok(Prepared {
        small,
        big,
        fit,
        config,
    })
}

fn run_predict(a: PredictArgs) -> Result<(), CliError> {
    let prep = prepare(
        &a.small,
        &a.big,
        a.fit.as_deref(),
        a.seed,
        &a.options,
        a.allow_unconverged,
    )?;
    let pcfg = PredictConfig {
        quadrature_order: a.quadrature_order,
    };
    let table = estimate_all(&prep.small.sample, &prep.big.sample, &prep.fit, &pcfg)?;
    table.warnings.iter().for_each(|w| warn(w));
    let actual = a.truth.as_deref().map(|p| aligned_truth(p, &table)).transpose()?;
    let text = match a.format {
        Format::Json => {
            let mut config = prep.config;
            config["predict"] = json!(pcfg);
            config["truth"] = json!(a.truth.as_deref().map(path_str));
            let out = PredictOutput {
                estimates: &table.estimates,
                actual: actual.as_deref(),
                warnings: &table.warnings,
                raw_weight_sums: weight_report(&prep.big.sample),
            };
            envelope("predict", a.seed, config, &out)?
        }
        Format::Csv => output::estimates_csv(&table.estimates, actual.as_deref())?,
    };
    write_text(a.out.as_deref(), &text)
}

#[derive(Serialize)]
struct BootstrapOutput<'a> {
    estimates: &'a [smallarea::AreaEstimate],
    #[serde(skip_serializing_if = "Option::is_none")]
    actual: Option<&'a [Option<f64>]>,
    mspe: &'a smallarea::MspeResult,
    warnings: &'a [String],
}

fn run_bootstrap(a: BootstrapArgs) -> Result<(), CliError> {
    let prep = prepare(
        &a.small,
        &a.big,
        a.fit.as_deref(),
        Some(a.seed),
        &a.options,
        a.allow_unconverged,
    )?;
    let pcfg = PredictConfig {
        quadrature_order: a.quadrature_order,
    };
    let mut table = estimate_all(&prep.small.sample, &prep.big.sample, &prep.fit, &pcfg)?;
    table.warnings.iter().for_each(|w| warn(w));
    let bcfg = BootstrapConfig {
        b_replicates: a.b_replicates,
        seed: a.seed,
        em_config: a.options.em_config(a.seed),
        adj_config: a.options.adj_config(),
        keep_failures: a.keep_failures,
        quadrature_order: a.quadrature_order,
    };
    let result = bootstrap_mspe(&prep.small.sample, &prep.big.sample, &prep.fit, &bcfg)?;
    if !result.failed.is_empty() {
        warn(&format!(
            "{} of {} bootstrap replicates failed",
            result.failed.len(),
            a.b_replicates
        ));
    }
    apply_mspe(&mut table.estimates, &result);
    let actual = a.truth.as_deref().map(|p| aligned_truth(p, &table)).transpose()?;
    let text = match a.format {
        Format::Json => {
            let mut config = prep.config;
            config["bootstrap"] = json!(bcfg);
            config["truth"] = json!(a.truth.as_deref().map(path_str));
            let out = BootstrapOutput {
                estimates: &table.estimates,
                actual: actual.as_deref(),
                mspe: &result,
                warnings: &table.warnings,
            };
            envelope("bootstrap", Some(a.seed), config, &out)?
        }
        Format::Csv => output::estimates_csv(&table.estimates, actual.as_deref())?,
    };
    write_text(a.out.as_deref(), &text)
}

fn covariate_names(p: usize) -> Vec<String> {
    (1..=p).map(|k| format!("x{k}")).collect()
}

fn run_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.design).map_err(|e| CliError::Io {
        path: path_str(&a.design),
        source: e,
    })?;
    let mut design: SimDesign = serde_json::from_str(&text)?;
    design.seed = a.seed;
    let world = simulate(&design)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Io {
        path: path_str(&a.out),
        source: e,
    })?;
    let names = covariate_names(design.p());
    let files = [
        ("small.csv", output::small_csv(&world.small, &names)?),
        ("big.csv", output::big_csv(&world.big, &names)?),
        ("truth.csv", output::truth_csv(world.big.area_ids(), &world.truths)?),
    ];
    for (name, body) in &files {
        write_text(Some(&a.out.join(name)), body)?;
    }
    let manifest = json!({
        "design": design,
        "files": files.iter().map(|f| f.0).collect::<Vec<_>>(),
        "covariates": names,
        "small_units": world.small.len(),
        "big_units": world.big.len(),
        "areas_small": world.small.m_observed(),
        "areas_big": world.big.num_areas(),
        "true_effects": world.effects.values(),
    });
    let text = envelope(
        "simulate",
        Some(a.seed),
        json!({ "design": path_str(&a.design) }),
        &manifest,
    )?;
    write_text(Some(&a.out.join("manifest.json")), &text)
}

#[derive(Serialize)]
struct EvaluateOutput {
    areas: Vec<String>,
    report: smallarea::sim::EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<smallarea::sim::EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_gain: Option<smallarea::sim::RelativeGain>,
    /// Truth areas without a value in the evaluated columns.
    skipped: Vec<String>,
}

fn run_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let truths = read_column(&a.truth, "truth")?;
    let main: HashMap<String, Option<f64>> = read_column(&a.estimates, &a.column)?.into_iter().collect();
    let base: Option<HashMap<String, Option<f64>>> = a
        .baseline
        .as_deref()
        .map(|c| read_column(&a.estimates, c).map(|v| v.into_iter().collect()))
        .transpose()?;
    let (mut areas, mut est, mut est_b, mut tru, mut skipped) = (vec![], vec![], vec![], vec![], vec![]);
    for (area, truth) in truths {
        let value = main.get(&area).copied().flatten();
        let base_value = base.as_ref().map(|b| b.get(&area).copied().flatten());
        match (truth, value, base_value) {
            (Some(t), Some(v), None) => {
                tru.push(t);
                est.push(v);
                areas.push(area);
            }
            (Some(t), Some(v), Some(Some(bv))) => {
                tru.push(t);
                est.push(v);
                est_b.push(bv);
                areas.push(area);
            }
            _ => skipped.push(area),
        }
    }
    let report = evaluate(&est, &tru)?;
    let baseline = base.is_some().then(|| evaluate(&est_b, &tru)).transpose()?;
    let relative_gain = baseline.as_ref().map(|b| report.relative_gain(b));
    let text = match a.format {
        Format::Json => {
            let config = json!({
                "estimates": path_str(&a.estimates),
                "truth": path_str(&a.truth),
                "column": a.column,
                "baseline": a.baseline,
            });
            let out = EvaluateOutput {
                areas,
                report,
                baseline,
                relative_gain,
                skipped,
            };
            envelope("evaluate", None, config, &out)?
        }
        Format::Csv => {
            let mut text = String::from("metric,value\n");
            for (k, v) in [("asd", report.asd), ("rasd", report.rasd), ("aad", report.aad)] {
                text.push_str(&format!("{k},{v}\n"));
            }
            text
        }
    };
    write_text(a.out.as_deref(), &text)
}
