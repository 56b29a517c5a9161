use super::{Matrix, NnError};

/// Gradient buffers aligned one-to-one with a model's parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<Matrix>);

impl Gradients {
    pub fn zeros_like(params: &[&Matrix]) -> Self {
        Self(params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect())
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.0
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.0
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<(), NnError> {
        if self.0.len() != other.0.len() {
            return Err(NnError::Shape(format!(
                "gradient sets of {} and {} tensors",
                self.0.len(),
                other.0.len()
            )));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|g| g.scale(s));
    }

    pub fn fill(&mut self, v: f64) {
        self.0.iter_mut().for_each(|g| g.fill(v));
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Matrix::is_finite)
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(Matrix::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A single-example vector-to-vector map with reverse-mode gradients.
pub trait Differentiable {
    /// Intermediate values retained by the forward pass.
    type Cache;

    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, Self::Cache), NnError>;

    /// Accumulates `dLoss/dθ` into `grads` and returns `dLoss/dx`.
    fn backward(
        &self,
        x: &[f64],
        cache: &Self::Cache,
        grad_out: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, NnError>;

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Projection applied after every optimizer step.
    fn constrain(&mut self) {}

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

fn mse_loss(yhat: &[f64], y: &[f64]) -> f64 {
    yhat.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

/// Relative discrepancy floor: below this numeric magnitude the comparison
/// is effectively absolute.
const REL_FLOOR: f64 = 1e-6;

/// Worst relative error between reverse-mode gradients and central
/// differences of the MSE loss, over every parameter and input entry.
///
/// Relative error is `|analytic - numeric| / max(|numeric|, 1e-6)`.
pub fn gradient_check<M>(model: &M, x: &[f64], y: &[f64], h: f64) -> Result<f64, NnError>
where
    M: Differentiable + Clone,
{
    gradient_check_with(model, x, y, h, |_| {})
}

/// As [`gradient_check`], letting the caller tamper with the analytic
/// gradients before comparison (used to confirm the harness detects faults).
pub fn gradient_check_with<M>(
    model: &M,
    x: &[f64],
    y: &[f64],
    h: f64,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<f64, NnError>
where
    M: Differentiable + Clone,
{
    let (yhat, cache) = model.forward_cached(x)?;
    if yhat.len() != y.len() {
        return Err(NnError::Shape(format!(
            "target of length {} for output of length {}",
            y.len(),
            yhat.len()
        )));
    }
    let o = y.len() as f64;
    let grad_out: Vec<f64> = yhat.iter().zip(y).map(|(a, b)| 2.0 * (a - b) / o).collect();
    let mut grads = Gradients::zeros_like(&model.params());
    let dx = model.backward(x, &cache, &grad_out, &mut grads)?;
    tamper(&mut grads);

    let rel = |analytic: f64, numeric: f64| (analytic - numeric).abs() / numeric.abs().max(REL_FLOOR);
    let mut worst = 0.0f64;

    let mut probe = model.clone();
    let n_tensors = grads.tensors().len();
    for t in 0..n_tensors {
        for i in 0..grads.tensors()[t].len() {
            let orig = probe.params()[t].as_slice()[i];
            probe.params_mut()[t].as_mut_slice()[i] = orig + h;
            let up = mse_loss(&probe.forward(x)?, y);
            probe.params_mut()[t].as_mut_slice()[i] = orig - h;
            let down = mse_loss(&probe.forward(x)?, y);
            probe.params_mut()[t].as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel(grads.tensors()[t].as_slice()[i], numeric));
        }
    }

    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = mse_loss(&model.forward(&xp)?, y);
        xp[i] = x[i] - h;
        let down = mse_loss(&model.forward(&xp)?, y);
        xp[i] = x[i];
        worst = worst.max(rel(dx[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}
