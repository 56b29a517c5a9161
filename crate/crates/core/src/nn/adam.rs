use serde::{Deserialize, Serialize};

use super::{Gradients, Matrix, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step_count: u64,
}

impl AdamState {
    pub fn new(params: &[&Matrix], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update. Fails without touching anything if a gradient is non-finite.
    pub fn step(&mut self, mut params: Vec<&mut Matrix>, grads: &Gradients) -> Result<(), NnError> {
        let g = grads.tensors();
        if params.len() != g.len() || params.len() != self.m.len() {
            return Err(NnError::Shape(format!(
                "adam over {} tensors given {} params and {} gradients",
                self.m.len(),
                params.len(),
                g.len()
            )));
        }
        for (i, (p, gt)) in params.iter().zip(g).enumerate() {
            if p.shape() != gt.shape() || p.shape() != self.m[i].shape() {
                return Err(NnError::dims("adam_step", p.shape(), gt.shape()));
            }
            if !gt.is_finite() {
                return Err(NnError::Divergence { tensor: i });
            }
        }

        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (j, (theta, &gr)) in p.as_mut_slice().iter_mut().zip(g[i].as_slice()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gr;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gr * gr;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *theta -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
