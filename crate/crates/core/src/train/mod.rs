//! Mini-batch Adam training with early stopping on validation MSE,
//! evaluation, and a grid sweep.
//!
//! Batch gradients are computed over fixed-size chunks of the batch in
//! parallel and summed in chunk order, so results are bitwise independent of
//! the worker count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::WindowDataset;
use crate::model::{AnyModel, Architecture, ModelError};
use crate::nn::{AdamConfig, AdamState, Differentiable, Gradients, NnError};

/// Examples per gradient work unit; part of the numerical contract.
pub const GRAD_CHUNK: usize = 32;

/// ChaCha stream reserved for batch shuffling.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("{what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite_epoch})")]
    Diverged { epoch: usize, last_finite_epoch: usize },
    #[error("every sweep cell failed ({0} cells)")]
    SweepFailed(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 2048,
            patience: 20,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `max_epochs = 0` is accepted and means "return the initialization".
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be positive".into()));
        }
        if self.max_epochs > 0 && self.patience > self.max_epochs {
            return Err(TrainError::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// 1-based epoch of the returned snapshot; 0 when no epoch ran.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_val_mse(&self) -> Option<f64> {
        self.best_epoch.checked_sub(1).map(|i| self.val_mse[i])
    }
}

/// `(1/O) Σ (y - ŷ)²`.
pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64, TrainError> {
    if y.len() != yhat.len() {
        return Err(TrainError::Shape {
            what: "forecast length",
            expected: y.len(),
            actual: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(TrainError::EmptyDataset("forecast"));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Mean of per-example MSE.
pub fn batch_mse<Y: AsRef<[f64]>, P: AsRef<[f64]>>(ys: &[Y], yhats: &[P]) -> Result<f64, TrainError> {
    if ys.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    if ys.len() != yhats.len() {
        return Err(TrainError::Shape {
            what: "forecast rows",
            expected: ys.len(),
            actual: yhats.len(),
        });
    }
    let mut total = 0.0;
    for (y, p) in ys.iter().zip(yhats) {
        total += mse(y.as_ref(), p.as_ref())?;
    }
    Ok(total / ys.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mse: f64,
    pub per_example: Vec<f64>,
    pub forecasts: Vec<Vec<f64>>,
}

pub fn evaluate<M>(model: &M, data: &WindowDataset) -> Result<Evaluation, TrainError>
where
    M: Differentiable + Sync,
{
    if data.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    let forecasts = data
        .inputs
        .par_iter()
        .map(|x| model.forward(x))
        .collect::<Result<Vec<_>, _>>()?;
    let per_example = forecasts
        .iter()
        .zip(&data.targets)
        .map(|(f, y)| mse(y, f))
        .collect::<Result<Vec<_>, _>>()?;
    let mse = per_example.iter().sum::<f64>() / per_example.len() as f64;
    Ok(Evaluation {
        mse,
        per_example,
        forecasts,
    })
}

/// Gradient of the batch loss `(1/B) Σ_i MSE_i` and the summed per-example MSE.
fn batch_gradients<M>(model: &M, data: &WindowDataset, idx: &[usize]) -> Result<(Gradients, f64), TrainError>
where
    M: Differentiable + Sync,
{
    let params = model.params();
    let horizon = data.horizon as f64;
    let b = idx.len() as f64;
    let partials = idx
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = Gradients::zeros_like(&params);
            let mut loss = 0.0;
            for &i in chunk {
                let (x, y) = (&data.inputs[i], &data.targets[i]);
                let (yhat, cache) = model.forward_cached(x)?;
                loss += mse(y, &yhat)?;
                let grad_out: Vec<f64> = yhat.iter().zip(y).map(|(p, t)| 2.0 * (p - t) / (horizon * b)).collect();
                model.backward(x, &cache, &grad_out, &mut g)?;
            }
            Ok((g, loss))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut parts = partials.into_iter();
    let (mut total, mut loss) = parts.next().expect("batch is non-empty");
    for (g, l) in parts {
        total.add_assign(&g)?;
        loss += l;
    }
    Ok((total, loss))
}

/// Per-epoch progress passed to the observer of [`train_with_progress`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub improved: bool,
}

pub fn train<M>(model: M, train_set: &WindowDataset, val_set: &WindowDataset, cfg: &TrainConfig) -> Result<(M, TrainHistory), TrainError>
where
    M: Differentiable + Clone + Sync,
{
    train_with_progress(model, train_set, val_set, cfg, |_| {})
}

/// Trains with Adam, keeps the parameters of the best validation epoch and
/// stops after `patience` epochs without strict improvement.
pub fn train_with_progress<M, F>(
    mut model: M,
    train_set: &WindowDataset,
    val_set: &WindowDataset,
    cfg: &TrainConfig,
    mut progress: F,
) -> Result<(M, TrainHistory), TrainError>
where
    M: Differentiable + Clone + Sync,
    F: FnMut(&EpochStats),
{
    cfg.validate()?;
    for (name, ds) in [("training", train_set), ("validation", val_set)] {
        if ds.is_empty() {
            return Err(TrainError::EmptyDataset(name));
        }
    }
    let probe = model.forward(&train_set.inputs[0])?;
    if probe.len() != train_set.horizon || val_set.horizon != train_set.horizon {
        return Err(TrainError::Shape {
            what: "model horizon",
            expected: train_set.horizon,
            actual: probe.len(),
        });
    }

    let mut history = TrainHistory {
        train_mse: Vec::new(),
        val_mse: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    // Nothing to fit.
    if model.num_params() == 0 {
        return Ok((model, history));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut adam = AdamState::new(
        &model.params(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut stale = 0;
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.max_epochs {
        let diverged = TrainError::Diverged {
            epoch,
            last_finite_epoch: epoch - 1,
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (grads, loss) = batch_gradients(&model, train_set, batch)?;
            if !loss.is_finite() {
                return Err(diverged);
            }
            loss_sum += loss;
            match adam.step(model.params_mut(), &grads) {
                Ok(()) => {}
                Err(NnError::Divergence { .. }) => return Err(diverged),
                Err(e) => return Err(e.into()),
            }
            model.constrain();
        }
        let train_mse = loss_sum / n as f64;
        let val_mse = evaluate(&model, val_set)?.mse;
        if !(train_mse.is_finite() && val_mse.is_finite()) {
            return Err(diverged);
        }
        history.train_mse.push(train_mse);
        history.val_mse.push(val_mse);
        let improved = val_mse < best_val;
        if improved {
            best_val = val_mse;
            best = model.clone();
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        progress(&EpochStats {
            epoch,
            train_mse,
            val_mse,
            improved,
        });
        if stale >= cfg.patience {
            history.stopped_early = true;
            break;
        }
    }
    Ok((best, history))
}

/// One grid cell: an architecture and how to train it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub architecture: Architecture,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub param_count: usize,
    pub val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub best: usize,
    pub best_model: AnyModel,
}

/// Lowest validation MSE, then fewer parameters, then lower grid index.
pub fn select_best(cells: &[CellResult]) -> Option<usize> {
    cells
        .iter()
        .filter_map(|c| c.val_mse.map(|v| (v, c.param_count, c.index)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)))
        .map(|(_, _, i)| i)
}

/// Trained model, its validation MSE and best epoch.
fn run_cell(cell: &SweepCell, train_set: &WindowDataset, val_set: &WindowDataset) -> Result<(AnyModel, f64, usize), TrainError> {
    let model = AnyModel::build(&cell.architecture, cell.train.seed)?;
    let (model, hist) = train(model, train_set, val_set, &cell.train)?;
    let val_mse = match hist.best_val_mse() {
        Some(v) => v,
        None => evaluate(&model, val_set)?.mse,
    };
    Ok((model, val_mse, hist.best_epoch))
}

/// Trains every cell, recording failures instead of aborting. With
/// `parallel` the cells run concurrently; results are the same either way.
pub fn sweep(
    grid: &[SweepCell],
    train_set: &WindowDataset,
    val_set: &WindowDataset,
    parallel: bool,
) -> Result<SweepResult, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::Config("sweep grid is empty".into()));
    }
    let outcomes: Vec<_> = if parallel {
        grid.par_iter().map(|c| run_cell(c, train_set, val_set)).collect()
    } else {
        grid.iter().map(|c| run_cell(c, train_set, val_set)).collect()
    };
    let mut cells = Vec::with_capacity(grid.len());
    let mut models = Vec::with_capacity(grid.len());
    for (index, (cell, outcome)) in grid.iter().zip(outcomes).enumerate() {
        let param_count = AnyModel::build(&cell.architecture, 0)
            .map(|m| m.num_params())
            .unwrap_or(0);
        match outcome {
            Ok((model, val_mse, best_epoch)) => {
                cells.push(CellResult {
                    index,
                    param_count,
                    val_mse: Some(val_mse),
                    best_epoch: Some(best_epoch),
                    error: None,
                });
                models.push(Some(model));
            }
            Err(e) => {
                cells.push(CellResult {
                    index,
                    param_count,
                    val_mse: None,
                    best_epoch: None,
                    error: Some(e.to_string()),
                });
                models.push(None);
            }
        }
    }
    let best = select_best(&cells).ok_or(TrainError::SweepFailed(grid.len()))?;
    let best_model = models.swap_remove(best).expect("selected cell trained");
    Ok(SweepResult {
        cells,
        best,
        best_model,
    })
}
