//! Command-line entry point: configuration resolution, dispatch, and
//! report emission.
//!
//! Exit codes are stable: 0 success, 1 usage or configuration error,
//! 2 file ingestion/output error, 3 estimator undefined on the given
//! data, 4 every replication failed for a requested method.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::panel::{self, PanelError};
use crate::regression::{self, RegressionError, RegressionReport, VarianceEstimator};
use crate::shrinkage::{self, Method, ShrinkageError, ShrinkageResult};
use crate::simulation::{self, DgpSpec, SimError, SimMethod, SimReport};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV_VAR: &str = "SHRINKREG_SEED";

/// Bundled experiment presets, usable as `--config <name>`.
pub const PRESETS: [(&str, &str); 7] = [
    ("fig1_normal", include_str!("../presets/fig1_normal.json")),
    ("fig1_gamma", include_str!("../presets/fig1_gamma.json")),
    ("table1_n50", include_str!("../presets/table1_n50.json")),
    ("table1_n225", include_str!("../presets/table1_n225.json")),
    ("table1_n1000", include_str!("../presets/table1_n1000.json")),
    (
        "fig2_independent",
        include_str!("../presets/fig2_independent.json"),
    ),
    (
        "fig2_correlated",
        include_str!("../presets/fig2_correlated.json"),
    ),
];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Ingestion(String),
    #[error("{0}")]
    Estimator(String),
    #[error("{0}")]
    AllFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Ingestion(_) => 2,
            CliError::Estimator(_) => 3,
            CliError::AllFailed(_) => 4,
        }
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        CliError::Ingestion(e.to_string())
    }
}

impl From<ShrinkageError> for CliError {
    fn from(e: ShrinkageError) -> Self {
        CliError::Estimator(e.to_string())
    }
}

impl From<RegressionError> for CliError {
    fn from(e: RegressionError) -> Self {
        CliError::Estimator(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "shrinkreg",
    version,
    about = "Linear shrinkage estimators, downstream regression with robust inference, and seeded Monte Carlo experiments",
    after_help = "Exit codes: 0 success, 1 usage/config error, 2 file error, 3 estimator undefined, 4 all replications failed.\n\
                  Bundled presets for --config: fig1_normal, fig1_gamma, table1_n50, table1_n225, table1_n1000, fig2_independent, fig2_correlated."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate shrinkage on a panel and regress the outcome on the estimates
    Estimate(EstimateArgs),
    /// Run a seeded Monte Carlo experiment and report per-method metrics
    Simulate(SimulateArgs),
    /// Like simulate, but also trace coverage across a grid of beta values
    Coverage(CoverageArgs),
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// JSON config file or bundled preset name; flags override file values
    #[arg(long)]
    pub config: Option<String>,
    /// Measurements CSV (header `unit_id,x`)
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    /// Outcomes CSV (header `unit_id,y[,cluster][,c1,c2,...]`)
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    /// Comma-separated methods: fe,ho,he,cw_bc,cw_iv (default: all)
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Significance level for confidence intervals
    #[arg(long)]
    pub level: Option<f64>,
    /// Variance estimator for the reports
    #[arg(long, value_enum)]
    pub vcov: Option<VcovArg>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Which report files to write
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// JSON config file or bundled preset name; flags override file values
    #[arg(long)]
    pub config: Option<String>,
    /// Comma-separated methods: oracle,semi_oracle,fe,ho,he,cw_bc,cw_iv
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Master seed (fallback: config value, then $SHRINKREG_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo replications
    #[arg(long)]
    pub reps: Option<usize>,
    /// Significance level for confidence intervals
    #[arg(long)]
    pub level: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Which report files to write
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Worker threads (default: logical cores)
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub sim: SimulateArgs,
    /// Beta grid as LO:HI:STEP (e.g. 0.5:1.5:0.05)
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatArg {
    Json,
    Csv,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VcovArg {
    Ehw,
    Cluster,
}

/// On-disk configuration; every field a flag can override is optional.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub dgp: Option<DgpSpec>,
    pub measurements: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub reps: Option<usize>,
    pub level: Option<f64>,
    pub seed: Option<u64>,
    pub grid: Option<GridSpec>,
    pub vcov: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let well_formed = self.step > 0.0 && self.hi >= self.lo;
        if !well_formed {
            return Err(CliError::Usage(format!(
                "bad grid {}:{}:{} (need lo <= hi and step > 0)",
                self.lo, self.hi, self.step
            )));
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        Ok((0..=count)
            .map(|i| self.lo + i as f64 * self.step)
            .collect())
    }

    fn parse(s: &str) -> Result<GridSpec, CliError> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || CliError::Usage(format!("bad --grid {s:?}, expected LO:HI:STEP"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        Ok(GridSpec {
            lo: nums[0],
            hi: nums[1],
            step: nums[2],
        })
    }
}

/// Loads `--config`: an existing file path wins, otherwise a preset name
/// (with or without a `.json` suffix).
fn load_config(arg: &str) -> Result<ConfigFile, CliError> {
    let text = if Path::new(arg).exists() {
        std::fs::read_to_string(arg)
            .map_err(|e| CliError::Ingestion(format!("cannot read config {arg}: {e}")))?
    } else {
        let name = arg.strip_suffix(".json").unwrap_or(arg);
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| text.to_string())
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "config {arg:?} is neither a file nor a bundled preset; presets: {}",
                    PRESETS.map(|(n, _)| n).join(", ")
                ))
            })?
    };
    let cfg: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {arg:?}: {e}")))?;
    if cfg.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(CliError::Usage(format!(
            "unsupported config schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    Ok(cfg)
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(v) => {
            v.trim().parse::<u64>().map(Some).map_err(|_| {
                CliError::Usage(format!("{SEED_ENV_VAR}={v:?} is not a valid u64 seed"))
            })
        }
        Err(_) => Ok(None),
    }
}

fn parse_methods<T: std::str::FromStr<Err = String>>(names: &[String]) -> Result<Vec<T>, CliError> {
    names
        .iter()
        .map(|s| s.parse::<T>().map_err(CliError::Usage))
        .collect()
}

fn parse_format(s: &str) -> Result<FormatArg, CliError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "json" => Ok(FormatArg::Json),
        "csv" => Ok(FormatArg::Csv),
        "both" => Ok(FormatArg::Both),
        other => Err(CliError::Usage(format!("unknown format {other:?}"))),
    }
}

fn validate_level(level: f64) -> Result<f64, CliError> {
    if level > 0.0 && level < 1.0 {
        Ok(level)
    } else {
        Err(CliError::Usage(format!(
            "level must lie in (0,1), got {level}"
        )))
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Ingestion(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Ingestion(format!("cannot write {}: {e}", path.display())))
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        None => Ok(f()),
        Some(w) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot build worker pool: {e}")))?
            .install(f)),
    }
}

/// Parses argv and runs; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Testable entry point over explicit arguments.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Coverage(args) => cmd_coverage(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Variance components as written to `variance_components.json`; the
/// within-variance block is omitted when some unit has a single
/// measurement (FE-only panels).
#[derive(Serialize)]
struct VarianceComponentsOut {
    schema_version: u32,
    n: usize,
    kappa_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma2_pooled: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma2_theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma2_i: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct ReportRow {
    method: String,
    #[serde(flatten)]
    report: RegressionReport,
}

pub fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let cfg = args.config.as_deref().map(load_config).transpose()?;
    let cfg_ref = cfg.as_ref();
    let measurements = args
        .measurements
        .or_else(|| cfg_ref.and_then(|c| c.measurements.clone()))
        .ok_or_else(|| CliError::Usage("estimate requires --measurements".into()))?;
    let outcomes = args
        .outcomes
        .or_else(|| cfg_ref.and_then(|c| c.outcomes.clone()))
        .ok_or_else(|| CliError::Usage("estimate requires --outcomes".into()))?;
    let method_names = args
        .methods
        .or_else(|| cfg_ref.and_then(|c| c.methods.clone()));
    let methods: Vec<Method> = match method_names {
        Some(names) => parse_methods(&names)?,
        None => Method::ALL.to_vec(),
    };
    let methods: Vec<Method> = Method::ALL
        .iter()
        .copied()
        .filter(|m| methods.contains(m))
        .collect();
    let level = validate_level(
        args.level
            .or_else(|| cfg_ref.and_then(|c| c.level))
            .unwrap_or(0.05),
    )?;
    let vcov = match args.vcov {
        Some(v) => v,
        None => match cfg_ref.and_then(|c| c.vcov.as_deref()) {
            Some("ehw") => VcovArg::Ehw,
            Some("cluster") => VcovArg::Cluster,
            Some(other) => return Err(CliError::Usage(format!("unknown vcov {other:?}"))),
            None => VcovArg::Ehw,
        },
    };
    let out_dir = args
        .out
        .or_else(|| cfg_ref.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    let format = match args.format {
        Some(f) => f,
        None => cfg_ref
            .and_then(|c| c.format.as_deref())
            .map(parse_format)
            .transpose()?
            .unwrap_or(FormatArg::Both),
    };

    let panel = panel::load_panel(&measurements, &outcomes)?;
    if vcov == VcovArg::Cluster && !panel.has_clusters() {
        return Err(CliError::Usage(
            "--vcov cluster requires a cluster column in the outcomes file".into(),
        ));
    }

    // Shrinkage estimates per method. Estimator-undefined errors abort with
    // exit 3 and a message naming the offending quantity.
    let mut results: Vec<ShrinkageResult> = Vec::new();
    for &m in &methods {
        results.push(shrinkage::estimate(&panel, m)?);
    }

    let mut estimates_csv = String::from("unit_id,method,weight,theta_hat\n");
    for r in &results {
        for ((u, w), t) in panel.units().iter().zip(&r.weights).zip(&r.estimates) {
            estimates_csv.push_str(&format!("{},{},{},{}\n", u.id, r.method, w, t));
        }
    }
    write_file(&out_dir, "estimates.csv", &estimates_csv)?;

    let vc = shrinkage::variance_components(&panel).ok();
    let vc_out = VarianceComponentsOut {
        schema_version: CONFIG_SCHEMA_VERSION,
        n: panel.n(),
        kappa_hat: shrinkage::kappa_hat(&panel),
        sigma2_pooled: vc.as_ref().map(|v| v.sigma2_pooled),
        sigma2_theta: vc.as_ref().map(|v| v.sigma2_theta),
        v_hat: vc.as_ref().map(|v| v.v_hat),
        sigma2_i: vc.as_ref().map(|v| v.sigma2_i.clone()),
    };
    let mut vc_json = serde_json::to_string_pretty(&vc_out).expect("serialize");
    vc_json.push('\n');
    write_file(&out_dir, "variance_components.json", &vc_json)?;

    let y = panel.outcomes();
    let controls = panel.control_rows();
    let controls_opt = if panel.n_controls() > 0 {
        Some(controls.as_slice())
    } else {
        None
    };
    let mut rows: Vec<ReportRow> = Vec::new();
    for r in &results {
        let fit = regression::ols_fit(&r.estimates, &y, controls_opt)?;
        let (omega, kind) = match vcov {
            VcovArg::Ehw => (fit.omega_ehw()?, VarianceEstimator::Ehw),
            VcovArg::Cluster => {
                let labels = panel.clusters().expect("checked above");
                (fit.omega_cluster(&labels)?, VarianceEstimator::Cluster)
            }
        };
        let report = regression::make_report(&fit, omega, kind, level)?;
        rows.push(ReportRow {
            method: r.method.to_string(),
            report,
        });
    }

    if format != FormatArg::Csv {
        let mut json = serde_json::to_string_pretty(&rows).expect("serialize");
        json.push('\n');
        write_file(&out_dir, "reports.json", &json)?;
    }
    if format != FormatArg::Json {
        let mut csv = String::from("method,beta,se,ci_low,ci_high,p\n");
        for row in &rows {
            let r = &row.report;
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.method, r.beta_hat, r.se_beta, r.ci_low, r.ci_high, r.p_value
            ));
        }
        write_file(&out_dir, "reports.csv", &csv)?;
    }

    println!("n = {}, kappa_hat = {:.4}", panel.n(), vc_out.kappa_hat);
    println!(
        "{:<8} {:>12} {:>12} {:>12} {:>12} {:>10}",
        "method", "beta", "se", "ci_low", "ci_high", "p"
    );
    for row in &rows {
        let r = &row.report;
        println!(
            "{:<8} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>10.4}",
            row.method, r.beta_hat, r.se_beta, r.ci_low, r.ci_high, r.p_value
        );
    }
    Ok(())
}

struct SimSettings {
    spec: DgpSpec,
    methods: Vec<SimMethod>,
    reps: usize,
    level: f64,
    seed: u64,
    out_dir: PathBuf,
    format: FormatArg,
    workers: Option<usize>,
    grid: Option<GridSpec>,
}

fn resolve_sim_settings(
    args: &SimulateArgs,
    grid_flag: Option<&str>,
) -> Result<SimSettings, CliError> {
    let cfg = args.config.as_deref().map(load_config).transpose()?;
    let cfg_ref = cfg.as_ref();
    let spec = cfg_ref.and_then(|c| c.dgp.clone()).ok_or_else(|| {
        CliError::Usage("simulate/coverage require a config with a `dgp` block".into())
    })?;
    spec.validate()?;
    let method_names = args
        .methods
        .clone()
        .or_else(|| cfg_ref.and_then(|c| c.methods.clone()));
    let methods: Vec<SimMethod> = match method_names {
        Some(names) => parse_methods(&names)?,
        None => vec![
            SimMethod::Oracle,
            SimMethod::Estimator(Method::He),
            SimMethod::Estimator(Method::CwBc),
            SimMethod::Estimator(Method::Fe),
        ],
    };
    if methods.is_empty() {
        return Err(CliError::Usage("empty method list".into()));
    }
    let reps = args
        .reps
        .or_else(|| cfg_ref.and_then(|c| c.reps))
        .unwrap_or(3000);
    if reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let level = validate_level(
        args.level
            .or_else(|| cfg_ref.and_then(|c| c.level))
            .unwrap_or(0.05),
    )?;
    let seed = match args.seed {
        Some(s) => s,
        None => match cfg_ref.and_then(|c| c.seed) {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        },
    };
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg_ref.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    let format = match args.format {
        Some(f) => f,
        None => cfg_ref
            .and_then(|c| c.format.as_deref())
            .map(parse_format)
            .transpose()?
            .unwrap_or(FormatArg::Both),
    };
    let workers = args.workers.or_else(|| cfg_ref.and_then(|c| c.workers));
    let grid = match grid_flag {
        Some(s) => Some(GridSpec::parse(s)?),
        None => cfg_ref.and_then(|c| c.grid),
    };
    Ok(SimSettings {
        spec,
        methods,
        reps,
        level,
        seed,
        out_dir,
        format,
        workers,
        grid,
    })
}

/// Aligned stdout table, one row per method, columns in the order
/// sqrt(n*MSE(beta)), coverage %, bias, MSE(theta).
fn print_table(report: &SimReport) {
    println!(
        "{:<12} {:>18} {:>13} {:>10} {:>12} {:>8}",
        "method", "sqrt_n_mse_beta", "coverage_pct", "abs_bias", "mse_theta", "failed"
    );
    for m in &report.methods {
        println!(
            "{:<12} {:>18.3} {:>13.2} {:>10.3} {:>12.3} {:>8}",
            m.method.name(),
            m.sqrt_n_mse_beta,
            m.coverage_pct,
            m.abs_bias,
            m.mse_theta,
            m.failed_reps
        );
    }
}

fn check_all_failed(report: &SimReport) -> Result<(), CliError> {
    for m in &report.methods {
        if m.failed_reps == report.reps {
            return Err(CliError::AllFailed(format!(
                "method {} failed on every replication",
                m.method
            )));
        }
    }
    Ok(())
}

fn write_sim_outputs(report: &SimReport, s: &SimSettings) -> Result<(), CliError> {
    if s.format != FormatArg::Csv {
        write_file(&s.out_dir, "report.json", &report.to_json())?;
    }
    if s.format != FormatArg::Json {
        write_file(&s.out_dir, "report.csv", &report.metrics_csv())?;
    }
    if let Some(curves) = report.curves_csv() {
        write_file(&s.out_dir, "curves.csv", &curves)?;
    }
    Ok(())
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let settings = resolve_sim_settings(&args, None)?;
    let report = with_pool(settings.workers, || {
        simulation::run_monte_carlo(
            &settings.spec,
            &settings.methods,
            settings.reps,
            settings.level,
            settings.seed,
        )
    })??;
    check_all_failed(&report)?;
    write_sim_outputs(&report, &settings)?;
    print_table(&report);
    Ok(())
}

pub fn cmd_coverage(args: CoverageArgs) -> Result<(), CliError> {
    let settings = resolve_sim_settings(&args.sim, args.grid.as_deref())?;
    let grid = settings
        .grid
        .ok_or_else(|| {
            CliError::Usage("coverage requires --grid LO:HI:STEP (or a config grid)".into())
        })?
        .values()?;
    let report = with_pool(settings.workers, || {
        simulation::coverage_curve(
            &settings.spec,
            &settings.methods,
            &grid,
            settings.reps,
            settings.level,
            settings.seed,
        )
    })??;
    check_all_failed(&report)?;
    write_sim_outputs(&report, &settings)?;
    print_table(&report);
    Ok(())
}

/// Parsed presets, used by tests and `--help` docs.
pub fn preset_config(name: &str) -> Option<ConfigFile> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| serde_json::from_str(text).expect("bundled preset parses"))
}

/// All preset names with their parsed configs, in bundled order.
pub fn presets() -> BTreeMap<&'static str, ConfigFile> {
    PRESETS
        .iter()
        .map(|(n, text)| {
            (
                *n,
                serde_json::from_str::<ConfigFile>(text).expect("preset parses"),
            )
        })
        .collect()
}
