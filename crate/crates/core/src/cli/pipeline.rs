//! Stage-by-stage implementations behind the subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{merge_json, RunConfig};
use super::report::{EvalReport, MseSummary, Normalization, SeedRun, TosEntry, TosTable, REPORT_SCHEMA, SWEEP_SCHEMA, TOS_SCHEMA};
use super::CliError;
use crate::analysis::{adf_test, correlation_matrix, dominant_period, fft_magnitudes, AdfResult, AnalysisError};
use crate::conformal::{calibrate_multistep, collect_residuals, evaluate_band, tos_scores, wac, ConformalBand, ConformalError, CoverageReport, WidthSign};
use crate::data::{difference, downsample, interpolate_outliers, load_series, mean_std, prepare, write_series, DataError, PreparedData, TimeSeries};
use crate::model::checkpoint::{self, CheckpointError};
use crate::model::{AnyModel, Architecture, ModelKind, PersistenceModel};
use crate::nn::Differentiable;
use crate::train::{evaluate, sweep, train_with_progress, EpochStats, SweepCell, TrainError, TrainHistory};

/// How the calibration set is drawn, recorded in every report.
pub const CALIBRATION_SET: &str = "validation windows";

fn data_err(stage: &str, e: DataError) -> CliError {
    CliError::User(format!("{stage}: {e}"))
}

fn train_err(stage: &str, e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::EmptyDataset(_) | TrainError::Shape { .. } => {
            CliError::User(format!("{stage}: {e}"))
        }
        _ => CliError::Internal(format!("{stage}: {e}")),
    }
}

fn conformal_err(stage: &str, e: ConformalError) -> CliError {
    match e {
        ConformalError::InsufficientCalibration { .. }
        | ConformalError::BadAlpha(_)
        | ConformalError::BadWeight { .. }
        | ConformalError::TooFewReports(_)
        | ConformalError::Empty => CliError::User(format!("{stage}: {e}")),
        _ => CliError::Internal(format!("{stage}: {e}")),
    }
}

fn checkpoint_err(e: CheckpointError) -> CliError {
    CliError::User(format!("checkpoint: {e}"))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::User(format!("writing {}: {e}", path.display())))
}

pub fn load_prepared(cfg: &RunConfig) -> Result<(TimeSeries, PreparedData), CliError> {
    let series = load_series(cfg.data_path()?, &cfg.load_options()).map_err(|e| data_err("ingest", e))?;
    let prepared = prepare(&series, cfg.delta, cfg.split, cfg.lookback, cfg.horizon).map_err(|e| data_err("prepare", e))?;
    Ok((series, prepared))
}

/// Test error, calibrated band and test coverage of one model.
struct Scored {
    test_mse: f64,
    band: ConformalBand,
    coverage: CoverageReport,
}

fn score(model: &AnyModel, data: &PreparedData, alpha: f64) -> Result<Scored, CliError> {
    let test = evaluate(model, &data.test).map_err(|e| train_err("evaluate", e))?;
    let cal = evaluate(model, &data.val).map_err(|e| train_err("calibrate", e))?;
    let residuals = collect_residuals(&cal.forecasts, &data.val.targets).map_err(|e| conformal_err("calibrate", e))?;
    let band = calibrate_multistep(&residuals, alpha).map_err(|e| conformal_err("calibrate", e))?;
    let coverage = evaluate_band(&band, &test.forecasts, &data.test.targets).map_err(|e| conformal_err("coverage", e))?;
    Ok(Scored {
        test_mse: test.mse,
        band,
        coverage,
    })
}

fn persistence_mse(cfg: &RunConfig, data: &PreparedData) -> Result<f64, CliError> {
    let p = PersistenceModel {
        lookback: cfg.lookback,
        horizon: cfg.horizon,
    };
    Ok(evaluate(&p, &data.test).map_err(|e| train_err("evaluate", e))?.mse)
}

fn checkpoint_metadata(cfg: &RunConfig, seed: u64, dataset: &str, norm: Normalization) -> Value {
    json!({
        "config": cfg,
        "seed": seed,
        "dataset": dataset,
        "normalization": norm,
    })
}

/// Everything a run produces: the report and the first seed's model.
pub struct PipelineOutput {
    pub report: EvalReport,
    pub model: AnyModel,
    pub metadata: Value,
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    command: &str,
    cfg: &RunConfig,
    dataset: &str,
    model: &AnyModel,
    data: &PreparedData,
    runs: Vec<SeedRun>,
    first: &Scored,
    persistence: f64,
) -> Result<EvalReport, CliError> {
    let cov = first.coverage;
    Ok(EvalReport {
        schema: REPORT_SCHEMA.into(),
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        dataset: dataset.into(),
        model_kind: model.kind(),
        lookback: model.lookback(),
        horizon: model.horizon(),
        param_count: model.num_params(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        test_mse: MseSummary::from_values(runs.iter().map(|r| r.test_mse).collect()),
        persistence_mse: persistence,
        n_test: data.test.len(),
        alpha: first.band.alpha,
        calibration_set: CALIBRATION_SET.into(),
        calibration_size: first.band.m,
        epsilons: first.band.epsilons.clone(),
        ic: cov.ic,
        jc: cov.jc,
        miw: cov.miw,
        wac: wac(cov.jc, cov.ic, cfg.beta).map_err(|e| conformal_err("report", e))?,
        tos: None,
        normalization: Normalization {
            train_mean: data.split.train_mean,
            train_std: data.split.train_std,
        },
        runs,
        config: cfg.clone(),
    })
}

/// ingest → interpolate → split/normalize → window → train per seed →
/// evaluate → calibrate on validation windows → test coverage → report.
pub fn run_pipeline<P>(cfg: &RunConfig, mut progress: P) -> Result<PipelineOutput, CliError>
where
    P: FnMut(u64, &EpochStats),
{
    cfg.validate()?;
    let (series, data) = load_prepared(cfg)?;
    let arch = cfg.architecture();
    let persistence = persistence_mse(cfg, &data)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut first: Option<(AnyModel, Scored)> = None;
    for &seed in &cfg.seeds {
        let model = AnyModel::build(&arch, seed).map_err(|e| CliError::User(format!("model: {e}")))?;
        let (model, hist): (AnyModel, TrainHistory) =
            train_with_progress(model, &data.train, &data.val, &cfg.train_config(seed), |s| progress(seed, s))
                .map_err(|e| train_err(&format!("train (seed {seed})"), e))?;
        let scored = score(&model, &data, cfg.alpha)?;
        runs.push(SeedRun {
            seed,
            test_mse: scored.test_mse,
            ic: scored.coverage.ic,
            jc: scored.coverage.jc,
            miw: scored.coverage.miw,
            best_epoch: Some(hist.best_epoch),
            epochs_run: Some(hist.val_mse.len()),
            stopped_early: Some(hist.stopped_early),
            best_val_mse: hist.best_val_mse(),
        });
        if first.is_none() {
            first = Some((model, scored));
        }
    }
    let (model, scored) = first.expect("at least one seed");
    let report = build_report("train", cfg, series.label(), &model, &data, runs, &scored, persistence)?;
    let metadata = checkpoint_metadata(cfg, cfg.seeds[0], series.label(), report.normalization);
    Ok(PipelineOutput {
        report,
        model,
        metadata,
    })
}

pub fn save_checkpoint(path: &Path, model: &AnyModel, metadata: Value) -> Result<(), CliError> {
    write_file(path, &checkpoint::encode(model, Some(metadata)))
}

/// Loads a checkpoint and the run config stored with it (defaults when absent).
pub fn load_checkpoint(path: &Path) -> Result<(AnyModel, RunConfig, Option<u64>), CliError> {
    let ck = checkpoint::load(path).map_err(checkpoint_err)?;
    let meta = ck.metadata.unwrap_or(Value::Null);
    let mut cfg = match meta.get("config") {
        Some(c) => serde_json::from_value(c.clone()).map_err(|e| CliError::User(format!("checkpoint config: {e}")))?,
        None => RunConfig::default(),
    };
    cfg.model = ck.model.kind();
    cfg.lookback = ck.model.lookback();
    cfg.horizon = ck.model.horizon();
    let seed = meta.get("seed").and_then(Value::as_u64);
    Ok((ck.model, cfg, seed))
}

/// Scores a trained model on the test segment with a freshly calibrated band.
pub fn evaluate_model(command: &str, model: &AnyModel, cfg: &RunConfig, seed: Option<u64>) -> Result<EvalReport, CliError> {
    let (series, data) = load_prepared(cfg)?;
    let persistence = persistence_mse(cfg, &data)?;
    let scored = score(model, &data, cfg.alpha)?;
    let run = SeedRun {
        seed: seed.unwrap_or(0),
        test_mse: scored.test_mse,
        ic: scored.coverage.ic,
        jc: scored.coverage.jc,
        miw: scored.coverage.miw,
        best_epoch: None,
        epochs_run: None,
        stopped_early: None,
        best_val_mse: None,
    };
    build_report(command, cfg, series.label(), model, &data, vec![run], &scored, persistence)
}

pub fn load_report(path: &Path) -> Result<EvalReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::User(format!("report {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::User(format!("report {}: {e}", path.display())))
}

/// Ranks reports of one (dataset, L, O, α) by trade-off score.
pub fn tos_compare(paths: &[PathBuf], beta: f64, lambda: f64, sign: WidthSign) -> Result<TosTable, CliError> {
    if paths.len() < 2 {
        return Err(CliError::User(format!("tos needs at least two reports, got {}", paths.len())));
    }
    let reports = paths.iter().map(|p| load_report(p)).collect::<Result<Vec<_>, _>>()?;
    let head = &reports[0];
    for (p, r) in paths.iter().zip(&reports).skip(1) {
        if (r.dataset.as_str(), r.lookback, r.horizon) != (head.dataset.as_str(), head.lookback, head.horizon)
            || r.alpha != head.alpha
        {
            return Err(CliError::User(format!(
                "report {} (dataset {}, L={}, O={}, alpha={}) is not comparable with {} (dataset {}, L={}, O={}, alpha={})",
                p.display(),
                r.dataset,
                r.lookback,
                r.horizon,
                r.alpha,
                paths[0].display(),
                head.dataset,
                head.lookback,
                head.horizon,
                head.alpha
            )));
        }
    }
    let coverage: Vec<CoverageReport> = reports
        .iter()
        .map(|r| CoverageReport {
            ic: r.ic,
            jc: r.jc,
            miw: r.miw,
            n_test: r.n_test,
        })
        .collect();
    let scores = tos_scores(&coverage, beta, lambda, sign).map_err(|e| conformal_err("tos", e))?;
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let entries = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let r = &reports[i];
            Ok(TosEntry {
                rank: rank + 1,
                report: paths[i].display().to_string(),
                model_kind: r.model_kind,
                test_mse: r.test_mse.mean,
                ic: r.ic,
                jc: r.jc,
                miw: r.miw,
                wac: wac(r.jc, r.ic, beta).map_err(|e| conformal_err("tos", e))?,
                tos: scores[i],
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(TosTable {
        schema: TOS_SCHEMA.into(),
        dataset: head.dataset.clone(),
        lookback: head.lookback,
        horizon: head.horizon,
        alpha: head.alpha,
        beta,
        lambda,
        width_sign: sign,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub dataset: String,
    pub len: usize,
    pub sample_interval_seconds: f64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub outliers_replaced: usize,
    pub downsample: Option<usize>,
    pub differenced: bool,
    pub written: Option<PathBuf>,
}

pub struct IngestOptions {
    pub downsample: Option<usize>,
    pub difference: bool,
    pub out: Option<PathBuf>,
}

/// Load, clean and optionally resample/difference a series.
pub fn ingest(cfg: &RunConfig, opts: &IngestOptions) -> Result<IngestSummary, CliError> {
    let raw = load_series(cfg.data_path()?, &cfg.load_options()).map_err(|e| data_err("ingest", e))?;
    let mut s = match cfg.delta {
        Some(d) => interpolate_outliers(&raw, d).map_err(|e| data_err("interpolate", e))?,
        None => raw.clone(),
    };
    let replaced = raw.values().iter().zip(s.values()).filter(|(a, b)| a != b).count();
    if let Some(k) = opts.downsample {
        s = downsample(&s, k).map_err(|e| data_err("downsample", e))?;
    }
    if opts.difference {
        s = difference(&s).map_err(|e| data_err("difference", e))?;
    }
    if let Some(p) = &opts.out {
        write_series(p, &s).map_err(|e| data_err("write", e))?;
    }
    let (mean, std) = mean_std(s.values());
    Ok(IngestSummary {
        dataset: s.label().to_string(),
        len: s.len(),
        sample_interval_seconds: s.sample_interval(),
        mean,
        std,
        min: s.values().iter().cloned().fold(f64::INFINITY, f64::min),
        max: s.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        outliers_replaced: replaced,
        downsample: opts.downsample,
        differenced: opts.difference,
        written: opts.out.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEntry {
    pub bin: usize,
    pub period_samples: f64,
    pub period_seconds: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesAnalysis {
    pub dataset: String,
    pub len: usize,
    pub adf: AdfResult,
    pub dominant_period_samples: Option<f64>,
    pub dominant_period_seconds: Option<f64>,
    pub top_periods: Vec<PeriodEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub datasets: Vec<String>,
    pub common_len: usize,
    pub matrix: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub series: Vec<SeriesAnalysis>,
    pub correlation: Option<Correlation>,
}

fn analysis_err(stage: &str, e: AnalysisError) -> CliError {
    CliError::User(format!("{stage}: {e}"))
}

/// ADF, spectrum and (for several inputs) correlation of cleaned series.
pub fn analyze(series: &[TimeSeries], max_lag: Option<usize>, top: usize) -> Result<AnalysisReport, CliError> {
    let mut out = Vec::with_capacity(series.len());
    for s in series {
        let adf = adf_test(s.values(), max_lag).map_err(|e| analysis_err(&format!("adf ({})", s.label()), e))?;
        let spec = fft_magnitudes(s.values()).map_err(|e| analysis_err(&format!("spectrum ({})", s.label()), e))?;
        let dominant = match dominant_period(&spec) {
            Ok(p) => Some(p),
            Err(AnalysisError::NoDominantPeriod) => None,
            Err(e) => return Err(analysis_err("spectrum", e)),
        };
        out.push(SeriesAnalysis {
            dataset: s.label().to_string(),
            len: s.len(),
            adf,
            dominant_period_samples: dominant,
            dominant_period_seconds: dominant.map(|p| p * s.sample_interval()),
            top_periods: spec
                .top_bins(top)
                .into_iter()
                .map(|(bin, period, magnitude)| PeriodEntry {
                    bin,
                    period_samples: period,
                    period_seconds: period * s.sample_interval(),
                    magnitude,
                })
                .collect(),
        });
    }
    let correlation = if series.len() >= 2 {
        let common_len = series.iter().map(TimeSeries::len).min().unwrap_or(0);
        let values: Vec<&[f64]> = series.iter().map(TimeSeries::values).collect();
        Some(Correlation {
            datasets: series.iter().map(|s| s.label().to_string()).collect(),
            common_len,
            matrix: correlation_matrix(&values, common_len).map_err(|e| analysis_err("correlation", e))?,
        })
    } else {
        None
    };
    Ok(AnalysisReport {
        series: out,
        correlation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub index: usize,
    pub overrides: Value,
    pub architecture: Architecture,
    pub param_count: usize,
    pub val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    pub dataset: String,
    pub model_kind: ModelKind,
    pub best_index: usize,
    pub cells: Vec<SweepEntry>,
    pub config: RunConfig,
}

/// The default grid: embedding widths 8, 32 and 128.
pub fn default_grid() -> Vec<Value> {
    [8, 32, 128].iter().map(|d| json!({"emf": {"embed_dim": d}})).collect()
}

/// Trains one cell per override object (merged over `base`) and selects the
/// lowest validation MSE. Returns the report, best model and its metadata.
pub fn run_sweep(base: &RunConfig, grid: &[Value], parallel: bool) -> Result<(SweepReport, AnyModel, Value), CliError> {
    base.validate()?;
    if grid.is_empty() {
        return Err(CliError::User("sweep grid is empty".into()));
    }
    let base_json = serde_json::to_value(base).expect("config serializes");
    let mut configs = Vec::with_capacity(grid.len());
    for (i, patch) in grid.iter().enumerate() {
        if !patch.is_object() {
            return Err(CliError::User(format!("grid cell {i} is not a JSON object")));
        }
        let mut merged = base_json.clone();
        merge_json(&mut merged, patch);
        let cfg: RunConfig =
            serde_json::from_value(merged).map_err(|e| CliError::User(format!("grid cell {i}: {e}")))?;
        let same_data = (&cfg.data, cfg.delta, cfg.split, cfg.lookback, cfg.horizon, &cfg.value_column)
            == (&base.data, base.delta, base.split, base.lookback, base.horizon, &base.value_column);
        if !same_data {
            return Err(CliError::User(format!(
                "grid cell {i} changes the dataset or window shape; sweep cells may only vary model and training fields"
            )));
        }
        configs.push(cfg);
    }
    let (series, data) = load_prepared(base)?;
    let cells: Vec<SweepCell> = configs
        .iter()
        .map(|c| SweepCell {
            architecture: c.architecture(),
            train: c.train_config(c.seeds.first().copied().unwrap_or(0)),
        })
        .collect();
    let result = sweep(&cells, &data.train, &data.val, parallel).map_err(|e| train_err("sweep", e))?;
    let entries = result
        .cells
        .iter()
        .zip(grid)
        .zip(&cells)
        .map(|((c, patch), cell)| SweepEntry {
            index: c.index,
            overrides: patch.clone(),
            architecture: cell.architecture.clone(),
            param_count: c.param_count,
            val_mse: c.val_mse,
            best_epoch: c.best_epoch,
            error: c.error.clone(),
        })
        .collect();
    let best_cfg = &configs[result.best];
    let norm = Normalization {
        train_mean: data.split.train_mean,
        train_std: data.split.train_std,
    };
    let metadata = checkpoint_metadata(best_cfg, cells[result.best].train.seed, series.label(), norm);
    Ok((
        SweepReport {
            schema: SWEEP_SCHEMA.into(),
            dataset: series.label().to_string(),
            model_kind: base.model,
            best_index: result.best,
            cells: entries,
            config: base.clone(),
        },
        result.best_model,
        metadata,
    ))
}
