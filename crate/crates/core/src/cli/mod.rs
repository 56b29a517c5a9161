//! The `emf` command line: argument parsing, config resolution and
//! dispatch to the pipeline stages.
//!
//! Exit codes: 0 success, 1 user error (bad flags, config or input data),
//! 2 internal error (training divergence, failed self-checks).

pub mod config;
pub mod pipeline;
pub mod report;
pub mod selftest;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;
pub use pipeline::{run_pipeline, tos_compare, PipelineOutput};
pub use report::{EvalReport, TosTable, REPORT_JSON_SCHEMA, REPORT_SCHEMA};

use crate::conformal::WidthSign;
use crate::data::{load_series, write_series};
use crate::fixtures;
use crate::model::ModelKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "emf", version, about = "EMF exposure forecasting with conformal prediction intervals")]
struct Cli {
    /// Suppress progress lines on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and clean a series; optionally downsample, difference and write it back out.
    Ingest(IngestArgs),
    /// Stationarity test, spectrum and cross-series correlation.
    Analyze(AnalyzeArgs),
    /// Train a forecaster per seed, evaluate it and calibrate intervals.
    Train(RunArgs),
    /// Score a checkpoint on the test segment.
    Eval(CheckpointArgs),
    /// Calibrate conformal intervals for a checkpoint and report coverage.
    Conformal(CheckpointArgs),
    /// Rank two or more reports by trade-off score.
    Tos(TosArgs),
    /// Grid search over model and training settings.
    Sweep(SweepArgs),
    /// Run the built-in gradient, normalization and quantile checks.
    Selftest(SelftestArgs),
}

/// Flags that override fields of the run config.
#[derive(Debug, Args, Default)]
struct ConfigArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    value_column: Option<String>,
    #[arg(long)]
    interval_seconds: Option<f64>,
    #[arg(long)]
    label: Option<String>,
    /// Outlier threshold: samples strictly above it are interpolated.
    #[arg(long)]
    delta: Option<f64>,
    /// Train,validation,test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    split: Option<Vec<f64>>,
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    patch_len: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// DLinear moving-average half width.
    #[arg(long)]
    half_window: Option<usize>,
    /// MLP hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Seeds, comma separated; one training run each.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

impl ConfigArgs {
    fn base(&self) -> Result<RunConfig, CliError> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone(); })*
            };
        }
        set!(
            value_column => value_column,
            lookback => lookback,
            horizon => horizon,
            model => model,
            patch_len => emf.patch_len,
            stride => emf.stride,
            embed_dim => emf.embed_dim,
            hidden_dim => emf.hidden_dim,
            blocks => emf.blocks,
            half_window => dlinear.half_window,
            hidden => mlp.hidden,
            epochs => train.max_epochs,
            batch_size => train.batch_size,
            patience => train.patience,
            lr => train.lr,
            seeds => seeds,
            alpha => alpha,
            beta => beta,
            lambda => lambda,
        );
        // A short --epochs with no explicit --patience shrinks the inherited patience.
        if self.epochs.is_some() && self.patience.is_none() && c.train.max_epochs > 0 {
            c.train.patience = c.train.patience.min(c.train.max_epochs);
        }
        if self.data.is_some() {
            c.data = self.data.clone();
        }
        if self.interval_seconds.is_some() {
            c.interval_seconds = self.interval_seconds;
        }
        if self.label.is_some() {
            c.label = self.label.clone();
        }
        if self.delta.is_some() {
            c.delta = self.delta;
        }
        if let Some(s) = &self.split {
            c.split = [s[0], s[1], s[2]];
        }
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = self.base()?;
        self.apply(&mut c);
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Checkpoint path for the first seed's model.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Average non-overlapping blocks of this many samples.
    #[arg(long)]
    downsample: Option<usize>,
    /// First-order differencing.
    #[arg(long)]
    difference: bool,
    /// Write the processed series as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// One or more CSV files (repeat the flag); two or more add a correlation matrix.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long, default_value = "value")]
    value_column: String,
    #[arg(long)]
    interval_seconds: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Upper bound for the ADF lag search (default: Schwert rule).
    #[arg(long)]
    max_lag: Option<usize>,
    /// Number of spectral peaks to list.
    #[arg(long, default_value_t = 5)]
    top: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum OutputFormat {
    Json,
    Text,
}

#[derive(Debug, Args)]
struct TosArgs {
    /// Reports written by train, eval or conformal.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Use `1/(1+e^z)` for the width term instead of rewarding narrow intervals.
    #[arg(long)]
    verbatim_sign: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// JSON array of override objects, one per grid cell (default: embed_dim 8, 32, 128).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Train cells concurrently.
    #[arg(long)]
    parallel: bool,
    /// Checkpoint path for the selected cell's model.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    /// Write the synthetic fixture CSVs into this directory.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, default_value_t = fixtures::DEFAULT_LEN)]
    fixture_len: usize,
    #[arg(long, default_value_t = fixtures::DEFAULT_SEED)]
    fixture_seed: u64,
}

fn emit(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Internal(format!("writing standard output: {e}")))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

fn write_report(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    if let Some(p) = path {
        std::fs::write(p, text).map_err(|e| CliError::User(format!("writing {}: {e}", p.display())))?;
    }
    Ok(())
}

fn progress_printer(quiet: bool) -> impl FnMut(u64, &crate::train::EpochStats) {
    move |seed, s| {
        if !quiet {
            eprintln!(
                "[seed {seed}] epoch {:>3}  train_mse {:.6}  val_mse {:.6}{}",
                s.epoch,
                s.train_mse,
                s.val_mse,
                if s.improved { "  *" } else { "" }
            );
        }
    }
}

fn cmd_train(args: &RunArgs, quiet: bool) -> Result<(), CliError> {
    let mut cfg = args.cfg.resolve()?;
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.report.is_some() {
        cfg.report = args.report.clone();
    }
    let out = pipeline::run_pipeline(&cfg, progress_printer(quiet))?;
    if let Some(p) = &cfg.out {
        pipeline::save_checkpoint(p, &out.model, out.metadata)?;
    }
    let text = out.report.to_json();
    write_report(cfg.report.as_deref(), &text)?;
    emit(&text)
}

fn cmd_checkpoint(command: &str, args: &CheckpointArgs) -> Result<(), CliError> {
    let (model, mut cfg, seed) = pipeline::load_checkpoint(&args.checkpoint)?;
    let (kind, lookback, horizon) = (cfg.model, cfg.lookback, cfg.horizon);
    if let Some(p) = &args.cfg.config {
        cfg = RunConfig::load(p)?;
    }
    args.cfg.apply(&mut cfg);
    if (cfg.model, cfg.lookback, cfg.horizon) != (kind, lookback, horizon) {
        return Err(CliError::User(format!(
            "checkpoint holds a {kind} model with L={lookback}, O={horizon}; the config asks for {} with L={}, O={}",
            cfg.model, cfg.lookback, cfg.horizon
        )));
    }
    if args.report.is_some() {
        cfg.report = args.report.clone();
    }
    let report = pipeline::evaluate_model(command, &model, &cfg, seed)?;
    let text = report.to_json();
    write_report(cfg.report.as_deref(), &text)?;
    emit(&text)
}

fn cmd_ingest(args: &IngestArgs) -> Result<(), CliError> {
    let cfg = args.cfg.resolve()?;
    let summary = pipeline::ingest(
        &cfg,
        &pipeline::IngestOptions {
            downsample: args.downsample,
            difference: args.difference,
            out: args.out.clone(),
        },
    )?;
    emit(&to_json(&summary))
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let cfg = RunConfig {
        value_column: args.value_column.clone(),
        interval_seconds: args.interval_seconds,
        delta: args.delta,
        ..Default::default()
    };
    let mut series = Vec::with_capacity(args.data.len());
    for path in &args.data {
        let c = RunConfig {
            data: Some(path.clone()),
            ..cfg.clone()
        };
        let s = load_series(c.data_path()?, &c.load_options()).map_err(|e| CliError::User(format!("ingest: {e}")))?;
        let s = match c.delta {
            Some(d) => crate::data::interpolate_outliers(&s, d).map_err(|e| CliError::User(format!("interpolate: {e}")))?,
            None => s,
        };
        series.push(s);
    }
    let report = pipeline::analyze(&series, args.max_lag, args.top)?;
    emit(&to_json(&report))
}

fn cmd_tos(args: &TosArgs) -> Result<(), CliError> {
    let sign = if args.verbatim_sign {
        WidthSign::Verbatim
    } else {
        WidthSign::Intent
    };
    let table = pipeline::tos_compare(&args.reports, args.beta, args.lambda, sign)?;
    match args.format {
        OutputFormat::Json => emit(&to_json(&table)),
        OutputFormat::Text => emit(&table.to_text()),
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let cfg = args.cfg.resolve()?;
    let grid = match &args.grid {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::User(format!("grid {}: {e}", p.display())))?;
            serde_json::from_str::<Vec<serde_json::Value>>(&text)
                .map_err(|e| CliError::User(format!("grid {}: {e}", p.display())))?
        }
        None => pipeline::default_grid(),
    };
    let (report, model, metadata) = pipeline::run_sweep(&cfg, &grid, args.parallel)?;
    if let Some(p) = &args.out {
        pipeline::save_checkpoint(p, &model, metadata)?;
    }
    emit(&to_json(&report))
}

fn cmd_selftest(args: &SelftestArgs) -> Result<(), CliError> {
    if let Some(dir) = &args.fixtures {
        std::fs::create_dir_all(dir).map_err(|e| CliError::User(format!("{}: {e}", dir.display())))?;
        let daily = fixtures::daily_cycle(args.fixture_len, args.fixture_seed).map_err(|e| CliError::User(e.to_string()))?;
        let two = fixtures::two_cycle(args.fixture_len, args.fixture_seed).map_err(|e| CliError::User(e.to_string()))?;
        for (name, s) in [("daily_cycle.csv", &daily), ("two_cycle.csv", &two)] {
            let path = dir.join(name);
            write_series(&path, s).map_err(|e| CliError::User(e.to_string()))?;
            emit(&format!("wrote {}\n", path.display()))?;
        }
    }
    let mut failed = 0;
    for c in selftest::run_all() {
        emit(&format!("{} {}: {}\n", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail))?;
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(CliError::Internal(format!("{failed} self-check(s) failed")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Train(a) => cmd_train(a, cli.quiet),
        Command::Eval(a) => cmd_checkpoint("eval", a),
        Command::Conformal(a) => cmd_checkpoint("conformal", a),
        Command::Tos(a) => cmd_tos(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

/// Worker count from `EMF_THREADS`, if set.
fn thread_limit() -> Result<Option<usize>, CliError> {
    match std::env::var("EMF_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::User(format!("EMF_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = thread_limit().and_then(|limit| match limit {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?
            .install(|| run(cli)),
        None => run(cli),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
