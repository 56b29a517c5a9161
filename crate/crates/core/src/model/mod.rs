//! Forecasters: the patch-mixer model and the DLinear, MLP and persistence
//! baselines, behind one [`AnyModel`] enum for training, checkpoints and
//! inference.

pub mod checkpoint;
mod dlinear;
mod emf;
mod mlp;
mod persistence;

pub use dlinear::{dlinear_decompose, DLinearModel, DLinearTrace, DEFAULT_HALF_WINDOW};
pub use emf::{
    patch_embed, patchify, revin_denormalize, revin_normalize, stb_block, Activation, EmfConfig,
    EmfModel, EmfTrace, MixerBlock, RevinStats, EPS_REV,
};
pub use mlp::{MlpModel, DEFAULT_HIDDEN};
pub use persistence::{persistence_forecast, PersistenceModel};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Differentiable, Gradients, Matrix, NnError, SeqCache};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Emforecaster,
    Dlinear,
    Mlp,
    Persistence,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Emforecaster => "emforecaster",
            ModelKind::Dlinear => "dlinear",
            ModelKind::Mlp => "mlp",
            ModelKind::Persistence => "persistence",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "emforecaster" => Ok(ModelKind::Emforecaster),
            "dlinear" => Ok(ModelKind::Dlinear),
            "mlp" => Ok(ModelKind::Mlp),
            "persistence" => Ok(ModelKind::Persistence),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

/// Everything needed to allocate a model, short of its weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "lowercase")]
pub enum Architecture {
    Emforecaster(EmfConfig),
    Dlinear {
        lookback: usize,
        horizon: usize,
        half_window: usize,
    },
    Mlp {
        lookback: usize,
        horizon: usize,
        hidden: Vec<usize>,
    },
    Persistence {
        lookback: usize,
        horizon: usize,
    },
}

impl Architecture {
    pub fn kind(&self) -> ModelKind {
        match self {
            Architecture::Emforecaster(_) => ModelKind::Emforecaster,
            Architecture::Dlinear { .. } => ModelKind::Dlinear,
            Architecture::Mlp { .. } => ModelKind::Mlp,
            Architecture::Persistence { .. } => ModelKind::Persistence,
        }
    }
}

/// Any of the supported forecasters.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Emf(EmfModel),
    DLinear(DLinearModel),
    Mlp(MlpModel),
    Persistence(PersistenceModel),
}

pub enum AnyTrace {
    Emf(EmfTrace),
    DLinear(DLinearTrace),
    Mlp(SeqCache),
    Persistence,
}

impl AnyModel {
    /// Seeded initialization from an architecture description.
    pub fn build(arch: &Architecture, seed: u64) -> Result<Self, ModelError> {
        Ok(match arch {
            Architecture::Emforecaster(c) => AnyModel::Emf(EmfModel::new(*c, seed)?),
            Architecture::Dlinear {
                lookback,
                horizon,
                half_window,
            } => AnyModel::DLinear(DLinearModel::new(*lookback, *horizon, *half_window, seed)?),
            Architecture::Mlp {
                lookback,
                horizon,
                hidden,
            } => AnyModel::Mlp(MlpModel::new(*lookback, *horizon, hidden, seed)?),
            Architecture::Persistence { lookback, horizon } => {
                if *lookback == 0 || *horizon == 0 {
                    return Err(ModelError::Config("persistence needs lookback, horizon >= 1".into()));
                }
                AnyModel::Persistence(PersistenceModel {
                    lookback: *lookback,
                    horizon: *horizon,
                })
            }
        })
    }

    /// Allocates the architecture and installs `tensors` in parameter order.
    pub fn from_tensors(arch: &Architecture, tensors: Vec<Matrix>) -> Result<Self, ModelError> {
        if let Architecture::Emforecaster(c) = arch {
            return Ok(AnyModel::Emf(EmfModel::from_tensors(*c, tensors)?));
        }
        let mut m = Self::build(arch, 0)?;
        let slots = m.params_mut();
        if slots.len() != tensors.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (i, (dst, src)) in slots.into_iter().zip(tensors).enumerate() {
            if dst.shape() != src.shape() {
                return Err(ModelError::Config(format!(
                    "tensor {i} has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src;
        }
        Ok(m)
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Emf(_) => ModelKind::Emforecaster,
            AnyModel::DLinear(_) => ModelKind::Dlinear,
            AnyModel::Mlp(_) => ModelKind::Mlp,
            AnyModel::Persistence(_) => ModelKind::Persistence,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            AnyModel::Emf(m) => Architecture::Emforecaster(*m.config()),
            AnyModel::DLinear(m) => Architecture::Dlinear {
                lookback: m.lookback(),
                horizon: m.horizon(),
                half_window: m.half_window,
            },
            AnyModel::Mlp(m) => Architecture::Mlp {
                lookback: m.lookback(),
                horizon: m.horizon(),
                hidden: m.hidden_widths(),
            },
            AnyModel::Persistence(m) => Architecture::Persistence {
                lookback: m.lookback,
                horizon: m.horizon,
            },
        }
    }

    pub fn lookback(&self) -> usize {
        match self {
            AnyModel::Emf(m) => m.config().lookback,
            AnyModel::DLinear(m) => m.lookback(),
            AnyModel::Mlp(m) => m.lookback(),
            AnyModel::Persistence(m) => m.lookback,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            AnyModel::Emf(m) => m.config().horizon,
            AnyModel::DLinear(m) => m.horizon(),
            AnyModel::Mlp(m) => m.horizon(),
            AnyModel::Persistence(m) => m.horizon,
        }
    }

    pub fn tensor_names(&self) -> Vec<String> {
        match self {
            AnyModel::Emf(m) => m.tensor_names(),
            AnyModel::DLinear(_) => vec!["trend".into(), "season".into()],
            AnyModel::Mlp(m) => m
                .net
                .layers
                .iter()
                .enumerate()
                .flat_map(|(i, l)| match l {
                    crate::nn::Layer::Dense(p) => {
                        let mut v = vec![format!("layers.{i}.weight")];
                        if p.bias.is_some() {
                            v.push(format!("layers.{i}.bias"));
                        }
                        v
                    }
                    _ => Vec::new(),
                })
                .collect(),
            AnyModel::Persistence(_) => Vec::new(),
        }
    }

    /// Forecasts for many windows, in input order.
    pub fn predict_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NnError> {
        inputs.par_iter().map(|x| self.forward(x)).collect()
    }
}

impl Differentiable for AnyModel {
    type Cache = AnyTrace;

    fn params(&self) -> Vec<&Matrix> {
        match self {
            AnyModel::Emf(m) => m.params(),
            AnyModel::DLinear(m) => m.params(),
            AnyModel::Mlp(m) => m.params(),
            AnyModel::Persistence(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            AnyModel::Emf(m) => m.params_mut(),
            AnyModel::DLinear(m) => m.params_mut(),
            AnyModel::Mlp(m) => m.params_mut(),
            AnyModel::Persistence(m) => m.params_mut(),
        }
    }

    fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, AnyTrace), NnError> {
        Ok(match self {
            AnyModel::Emf(m) => {
                let (y, c) = m.forward_cached(x)?;
                (y, AnyTrace::Emf(c))
            }
            AnyModel::DLinear(m) => {
                let (y, c) = m.forward_cached(x)?;
                (y, AnyTrace::DLinear(c))
            }
            AnyModel::Mlp(m) => {
                let (y, c) = m.forward_cached(x)?;
                (y, AnyTrace::Mlp(c))
            }
            AnyModel::Persistence(m) => (m.forward_cached(x)?.0, AnyTrace::Persistence),
        })
    }

    fn backward(
        &self,
        x: &[f64],
        cache: &AnyTrace,
        grad_out: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, NnError> {
        match (self, cache) {
            (AnyModel::Emf(m), AnyTrace::Emf(c)) => m.backward(x, c, grad_out, grads),
            (AnyModel::DLinear(m), AnyTrace::DLinear(c)) => m.backward(x, c, grad_out, grads),
            (AnyModel::Mlp(m), AnyTrace::Mlp(c)) => m.backward(x, c, grad_out, grads),
            (AnyModel::Persistence(m), AnyTrace::Persistence) => m.backward(x, &(), grad_out, grads),
            _ => Err(NnError::Shape("trace does not belong to this model".into())),
        }
    }

    fn constrain(&mut self) {
        if let AnyModel::Emf(m) = self {
            m.constrain();
        }
    }
}
