use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::nn::{DenseParams, Differentiable, Gradients, Layer, Matrix, NnError, SeqCache, Sequential};

pub const DEFAULT_HIDDEN: usize = 512;

/// Fully connected baseline: affine/relu pairs and a final affine output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub net: Sequential,
}

impl MlpModel {
    pub fn new(lookback: usize, horizon: usize, hidden: &[usize], seed: u64) -> Result<Self, ModelError> {
        if lookback == 0 || horizon == 0 || hidden.contains(&0) {
            return Err(ModelError::Config("mlp layer widths must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut width = lookback;
        for &h in hidden {
            layers.push(Layer::Dense(DenseParams::init(width, h, true, &mut rng)));
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Dense(DenseParams::init(width, horizon, true, &mut rng)));
        Ok(Self {
            net: Sequential::new(layers),
        })
    }

    /// Wraps an existing dense chain, checking that widths line up.
    pub fn from_layers(layers: Vec<DenseParams>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Config("mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(ModelError::Config(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        let n = layers.len();
        let mut seq = Vec::with_capacity(2 * n);
        for (i, l) in layers.into_iter().enumerate() {
            seq.push(Layer::Dense(l));
            if i + 1 < n {
                seq.push(Layer::Relu);
            }
        }
        Ok(Self {
            net: Sequential::new(seq),
        })
    }

    fn dense_layers(&self) -> impl Iterator<Item = &DenseParams> {
        self.net.layers.iter().filter_map(|l| match l {
            Layer::Dense(p) => Some(p),
            _ => None,
        })
    }

    pub fn lookback(&self) -> usize {
        self.dense_layers().next().map_or(0, DenseParams::input_dim)
    }

    pub fn horizon(&self) -> usize {
        self.dense_layers().last().map_or(0, DenseParams::output_dim)
    }

    /// Hidden widths, excluding the output layer.
    pub fn hidden_widths(&self) -> Vec<usize> {
        let dims: Vec<usize> = self.dense_layers().map(DenseParams::output_dim).collect();
        dims[..dims.len() - 1].to_vec()
    }
}

impl Differentiable for MlpModel {
    type Cache = SeqCache;

    fn params(&self) -> Vec<&Matrix> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.net.params_mut()
    }

    fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, SeqCache), NnError> {
        if x.len() != self.lookback() {
            return Err(NnError::Shape(format!(
                "input window has length {}, model expects {}",
                x.len(),
                self.lookback()
            )));
        }
        let (y, cache) = self.net.forward_cached(&Matrix::row_vector(x))?;
        Ok((y.into_vec(), cache))
    }

    fn backward(
        &self,
        _x: &[f64],
        cache: &SeqCache,
        grad_out: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, NnError> {
        Ok(self
            .net
            .backward(cache, &Matrix::row_vector(grad_out), grads)?
            .into_vec())
    }
}
