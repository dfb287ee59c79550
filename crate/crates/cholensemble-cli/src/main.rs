//! Command-line interface: covariance estimation, simulation experiments,
//! and minimum-variance backtests over ensembles of Cholesky-based
//! estimators.
//!
//! Exit codes: 0 success, 2 invalid input (bad flags, config, or data
//! files), 3 numerical failure (non-convergence, loss of positive
//! definiteness, infeasibility).

mod config;
mod input;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use cholensemble::ensemble::{
    build_candidates, estimate_from_candidates_with, sample_orderings, EnsembleResult, Method,
};
use cholensemble::format::{csv_record, float17};
use cholensemble::linalg::Permutation;
use cholensemble::mcd::DataMatrix;
use cholensemble::portfolio::{
    backtest, BacktestConfig, BacktestReport, CovEstimator, EnsembleEstimator, ReturnSeries,
    SampleRidgeEstimator,
};
use cholensemble::simlab::{
    run_experiment, ExperimentConfig, ExperimentReport, SamplerKind, ScenarioSpec,
};

use config::{OutputFormat, RunConfig, Threads};

#[derive(Parser)]
#[command(
    name = "cholensemble",
    version,
    about = "Covariance estimation by weighted ensembles of Cholesky-based estimators"
)]
struct Cli {
    /// Path to a `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Random seed (overrides the configuration file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads: a count or "auto" (overrides the configuration file
    /// and the CHOLENSEMBLE_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<Threads>,

    /// Ensemble size: the number of random variable orderings.
    #[arg(long, global = true)]
    orderings: Option<usize>,

    /// Report format for `simulate`: csv or json.
    #[arg(long, global = true)]
    output_format: Option<OutputFormat>,

    /// Pin every ordering to the identity permutation (debugging aid).
    #[arg(long, global = true, hide = true)]
    debug_identity_ordering: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration after flag, file, and environment
    /// layering, in the configuration-file format.
    Config,
    /// Estimate a covariance matrix from a CSV of observations (rows =
    /// observations, header = variable names).
    Estimate {
        /// Input CSV file.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Weighting method: equal, wae, or wae_star.
        #[arg(long, default_value = "wae")]
        method: Method,
        /// Directory for sigma.csv and estimate.json.
        #[arg(long, value_name = "DIR", default_value = ".")]
        output_dir: PathBuf,
        /// Record wall-clock milliseconds in estimate.json. Timing varies
        /// run to run, so this breaks byte-for-byte reproducibility.
        #[arg(long)]
        timing: bool,
    },
    /// Run a simulation experiment against a synthetic covariance scenario.
    Simulate {
        /// Scenario id, 1 through 7.
        #[arg(long)]
        scenario: u8,
        /// Sampling distribution: normal, t_case_I, or mixed_case_II.
        #[arg(long, default_value = "normal")]
        case: SamplerKind,
        /// Observations per replication.
        #[arg(long)]
        n: usize,
        /// Dimension.
        #[arg(long)]
        p: usize,
        /// Number of replications.
        #[arg(long)]
        reps: usize,
        /// Comma-separated methods (default: all of equal,wae,wae_star).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Directory for report.csv or report.json.
        #[arg(long, value_name = "DIR", default_value = ".")]
        output_dir: PathBuf,
        /// Use the absolute-eigenvalue variant of the L2 loss.
        #[arg(long)]
        l2_abs: bool,
    },
    /// Backtest minimum-variance portfolios over an expanding window.
    Backtest {
        /// Input CSV of returns (rows = periods; an optional leading label
        /// column names the periods).
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// First period estimated from history (expanding window start).
        #[arg(long)]
        window: usize,
        /// Comma-separated estimators from equal, wae, wae_star,
        /// sample_ridge (default: all four).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Diagonal loading for the sample_ridge estimator.
        #[arg(long, default_value_t = 1e-6)]
        ridge: f64,
        /// Compound cumulative returns instead of the additive running sum.
        #[arg(long)]
        compound: bool,
        /// Directory for per-estimator reports and the combined CSV.
        #[arg(long, value_name = "DIR", default_value = ".")]
        output_dir: PathBuf,
    },
}

/// Error carrying its process exit code.
enum CliError {
    /// Bad flags, configuration, or data files: exit 2.
    Input(String),
    /// Library failure; invalid-input roots exit 2, numerical roots exit 3.
    Lib(cholensemble::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Lib(e) => match e.root() {
                cholensemble::Error::InvalidInput(_) => 2,
                _ => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) => write!(f, "{msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<cholensemble::Error> for CliError {
    fn from(e: cholensemble::Error) -> Self {
        CliError::Lib(e)
    }
}

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    input_err(format!("{}: {e}", path.display()))
}

/// Settings every subcommand shares after flag/file/environment layering.
struct Ctx {
    run: RunConfig,
    pin_identity: bool,
}

/// Layers settings: command-line flags override the configuration file,
/// which overrides CHOLENSEMBLE_THREADS (threads only), which overrides the
/// defaults.
fn resolve_config(cli: &Cli) -> Result<Ctx, CliError> {
    let (mut run, file_keys) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            RunConfig::parse_with_keys(&text)
                .map_err(|e| input_err(format!("{}: {e}", path.display())))?
        }
        None => (RunConfig::default(), Vec::new()),
    };
    if let Some(threads) = cli.threads {
        run.threads = threads;
    } else if !file_keys.iter().any(|k| k == "threads") {
        if let Ok(value) = std::env::var("CHOLENSEMBLE_THREADS") {
            run.threads = value
                .parse()
                .map_err(|e| input_err(format!("CHOLENSEMBLE_THREADS: {e}")))?;
        }
    }
    if let Some(seed) = cli.seed {
        run.seed = seed;
    }
    if let Some(orderings) = cli.orderings {
        run.orderings = orderings;
    }
    if let Some(format) = cli.output_format {
        run.output_format = format;
    }
    run.validate().map_err(input_err)?;
    Ok(Ctx {
        run,
        pin_identity: cli.debug_identity_ordering,
    })
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = resolve_config(&cli)?;
    if let Threads::Count(n) = ctx.run.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| input_err(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Config => {
            print!("{}", ctx.run.render());
            Ok(())
        }
        Command::Estimate {
            input,
            method,
            output_dir,
            timing,
        } => cmd_estimate(&ctx, &input, method, &output_dir, timing),
        Command::Simulate {
            scenario,
            case,
            n,
            p,
            reps,
            methods,
            output_dir,
            l2_abs,
        } => cmd_simulate(
            &ctx,
            scenario,
            case,
            n,
            p,
            reps,
            methods.unwrap_or_else(|| Method::ALL.to_vec()),
            &output_dir,
            l2_abs,
        ),
        Command::Backtest {
            input,
            window,
            methods,
            ridge,
            compound,
            output_dir,
        } => cmd_backtest(
            &ctx,
            &input,
            window,
            methods.unwrap_or_else(|| {
                vec![
                    "equal".to_string(),
                    "wae".to_string(),
                    "wae_star".to_string(),
                    "sample_ridge".to_string(),
                ]
            }),
            ridge,
            compound,
            &output_dir,
        ),
    }
}

fn orderings_for(
    p: usize,
    m: usize,
    seed: u64,
    pin_identity: bool,
) -> Result<Vec<Permutation>, CliError> {
    if pin_identity {
        Ok(vec![Permutation::identity(p); m])
    } else {
        Ok(sample_orderings(p, m, seed)?)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn estimate_json(result: &EnsembleResult, run: &RunConfig, wall_ms: Option<f64>) -> String {
    let xi = match result.xi_selected {
        Some(v) => float17(v),
        None => "null".to_string(),
    };
    let weights = result
        .weights
        .weights
        .iter()
        .map(|&w| float17(w))
        .collect::<Vec<_>>()
        .join(",");
    let timing = match wall_ms {
        Some(ms) => format!(",\"wall_ms\":{}", float17(ms)),
        None => String::new(),
    };
    format!(
        "{{\"method\":\"{}\",\"orderings\":{},\"seed\":{},\"xi\":{},\
         \"nonzero_weight_count\":{},\"weights\":[{}]{}}}\n",
        result.method.name(),
        result.weights.weights.len(),
        run.seed,
        xi,
        result.nonzero_weight_count,
        weights,
        timing
    )
}

fn cmd_estimate(
    ctx: &Ctx,
    input: &Path,
    method: Method,
    output_dir: &Path,
    timing: bool,
) -> Result<(), CliError> {
    let table = input::read_table(input).map_err(input_err)?;
    let data = DataMatrix::from_rows(table.rows, Some(table.column_labels))?;
    let run = &ctx.run;
    let orderings = orderings_for(data.p(), run.orderings, run.seed, ctx.pin_identity)?;

    let start = Instant::now();
    let candidates = build_candidates(&data, &orderings, &run.lasso)?;
    let result = estimate_from_candidates_with(&data, method, &candidates, &run.xi_grid())?;
    let wall_ms = timing.then(|| start.elapsed().as_secs_f64() * 1e3);

    fs::create_dir_all(output_dir).map_err(|e| io_err(output_dir, e))?;
    let p = data.p();
    let mut sigma_csv = csv_record(data.labels().to_vec());
    for i in 0..p {
        let row: Vec<String> = (0..p)
            .map(|j| float17(result.sigma_hat.get(i, j)))
            .collect();
        sigma_csv.push_str(&csv_record(row));
    }
    let sigma_path = output_dir.join("sigma.csv");
    write_file(&sigma_path, &sigma_csv)?;
    let sidecar_path = output_dir.join("estimate.json");
    write_file(&sidecar_path, &estimate_json(&result, run, wall_ms))?;

    println!(
        "estimated {} x {} covariance with method {} ({} of {} weights nonzero)",
        p,
        p,
        result.method.name(),
        result.nonzero_weight_count,
        orderings.len()
    );
    println!("wrote {}", sigma_path.display());
    println!("wrote {}", sidecar_path.display());
    Ok(())
}

fn report_json(report: &ExperimentReport) -> String {
    let rows = report
        .rows
        .iter()
        .map(|row| {
            format!(
                "{{\"method\":\"{}\",\"loss\":\"{}\",\"mean\":{},\"se\":{},\
                 \"mean_nonzero_weights\":{}}}",
                row.method.name(),
                row.loss.name(),
                float17(row.mean),
                float17(row.se),
                float17(row.mean_nonzero_weights)
            )
        })
        .collect::<Vec<_>>()
        .join(",");
    let c = &report.config;
    format!(
        "{{\"scenario\":{},\"case\":\"{}\",\"n\":{},\"p\":{},\"M\":{},\"reps\":{},\"seed\":{},\
         \"truth_min_eigenvalue\":{},\"truth_max_eigenvalue\":{},\"rows\":[{}]}}\n",
        c.scenario.id,
        c.sampler.name(),
        c.n,
        c.scenario.p,
        c.m,
        c.replications,
        c.seed,
        float17(report.truth_min_eigenvalue),
        float17(report.truth_max_eigenvalue),
        rows
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    ctx: &Ctx,
    scenario: u8,
    case: SamplerKind,
    n: usize,
    p: usize,
    reps: usize,
    methods: Vec<Method>,
    output_dir: &Path,
    l2_abs: bool,
) -> Result<(), CliError> {
    let run = &ctx.run;
    let experiment = ExperimentConfig {
        scenario: ScenarioSpec {
            id: scenario,
            p,
            permutation_seed: Some(run.seed),
        },
        sampler: case,
        n,
        m: run.orderings,
        methods,
        replications: reps,
        seed: run.seed,
        lasso: run.lasso.clone(),
        l2_abs,
        pin_identity_orderings: ctx.pin_identity,
        xi_grid: Some(run.xi_grid()),
    };
    let report = run_experiment(&experiment)?;

    fs::create_dir_all(output_dir).map_err(|e| io_err(output_dir, e))?;
    let path = match run.output_format {
        OutputFormat::Csv => {
            let path = output_dir.join("report.csv");
            write_file(&path, &report.to_csv())?;
            path
        }
        OutputFormat::Json => {
            let path = output_dir.join("report.json");
            write_file(&path, &report_json(&report))?;
            path
        }
    };

    let c = &report.config;
    println!(
        "scenario {} case {} n {} p {} M {} reps {} seed {}",
        c.scenario.id,
        c.sampler.name(),
        c.n,
        c.scenario.p,
        c.m,
        c.replications,
        c.seed
    );
    println!(
        "truth spectrum: min {} max {}",
        float17(report.truth_min_eigenvalue),
        float17(report.truth_max_eigenvalue)
    );
    println!(
        "{:<10} {:<4} {:<24} {:<24} {}",
        "method", "loss", "mean", "se", "mean_nonzero_weights"
    );
    for row in &report.rows {
        println!(
            "{:<10} {:<4} {:<24} {:<24} {}",
            row.method.name(),
            row.loss.name(),
            float17(row.mean),
            float17(row.se),
            float17(row.mean_nonzero_weights)
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_backtest(
    ctx: &Ctx,
    input: &Path,
    window: usize,
    methods: Vec<String>,
    ridge: f64,
    compound: bool,
    output_dir: &Path,
) -> Result<(), CliError> {
    let table = input::read_table(input).map_err(input_err)?;
    let series = ReturnSeries::new(table.rows, table.row_labels, Some(table.column_labels))?;
    let run = &ctx.run;

    let mut estimators: Vec<Box<dyn CovEstimator>> = Vec::with_capacity(methods.len());
    for name in &methods {
        if methods.iter().filter(|m| *m == name).count() > 1 {
            return Err(input_err(format!(
                "estimator {name:?} listed more than once"
            )));
        }
        let estimator: Box<dyn CovEstimator> = if name == "sample_ridge" {
            Box::new(SampleRidgeEstimator { ridge })
        } else {
            let method: Method = name.parse()?;
            Box::new(EnsembleEstimator {
                method,
                m: run.orderings,
                seed: run.seed,
                lasso: run.lasso.clone(),
                pin_identity_orderings: ctx.pin_identity,
                xi_grid: Some(run.xi_grid()),
            })
        };
        estimators.push(estimator);
    }

    fs::create_dir_all(output_dir).map_err(|e| io_err(output_dir, e))?;
    let backtest_config = BacktestConfig { compound };
    let mut reports: Vec<BacktestReport> = Vec::with_capacity(estimators.len());
    for estimator in &estimators {
        let report = backtest(&series, estimator.as_ref(), window, &backtest_config)?;
        write_file(
            &output_dir.join(format!("backtest_{}.json", report.estimator)),
            &report.to_json(),
        )?;
        write_file(
            &output_dir.join(format!("cumulative_{}.csv", report.estimator)),
            &report.cumulative_csv(),
        )?;
        let ratio = if report.info_ratio.is_finite() {
            float17(report.info_ratio)
        } else {
            "null (zero variance)".to_string()
        };
        println!(
            "{:<14} awr {} se {} info_ratio {}",
            report.estimator,
            float17(report.awr),
            float17(report.se),
            ratio
        );
        reports.push(report);
    }

    let mut header = vec!["period".to_string()];
    header.extend(reports.iter().map(|r| r.estimator.clone()));
    let mut combined = csv_record(header);
    for (i, period) in reports[0].periods.iter().enumerate() {
        let mut record = vec![period.clone()];
        record.extend(reports.iter().map(|r| float17(r.cumulative_returns[i])));
        combined.push_str(&csv_record(record));
    }
    let combined_path = output_dir.join("cumulative_combined.csv");
    write_file(&combined_path, &combined)?;
    println!("wrote {}", combined_path.display());
    Ok(())
}
