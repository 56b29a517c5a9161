use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, Matrix, NnError};

/// Affine map `y = x Wᵀ + b` with `W: [out x in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub weight: Matrix,
    /// `1 x out` row, broadcast over the batch.
    pub bias: Option<Matrix>,
}

impl DenseParams {
    pub fn new(weight: Matrix, bias: Option<Matrix>) -> Result<Self, NnError> {
        if let Some(b) = &bias {
            if b.shape() != (1, weight.rows()) {
                return Err(NnError::Shape(format!(
                    "bias must be 1x{}, got {}x{}",
                    weight.rows(),
                    b.rows(),
                    b.cols()
                )));
            }
        }
        Ok(Self { weight, bias })
    }

    /// Fan-in uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            weight: Matrix::fan_in_uniform(output, input, rng),
            bias: bias.then(|| Matrix::zeros(1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

pub fn dense_forward(p: &DenseParams, x: &Matrix) -> Result<Matrix, NnError> {
    if x.cols() != p.weight.cols() {
        return Err(NnError::dims("dense_forward", x.shape(), p.weight.shape()));
    }
    let mut y = x.matmul_t(&p.weight)?;
    if let Some(b) = &p.bias {
        let b = b.as_slice();
        for r in 0..y.rows() {
            for (v, bb) in y.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
    }
    Ok(y)
}

/// Accumulates `dW` (and `db`) into the supplied buffers and returns `dx`.
pub fn dense_backward(
    p: &DenseParams,
    x: &Matrix,
    grad_y: &Matrix,
    grad_w: &mut Matrix,
    grad_b: Option<&mut Matrix>,
) -> Result<Matrix, NnError> {
    if grad_y.shape() != (x.rows(), p.weight.rows()) {
        return Err(NnError::dims("dense_backward", grad_y.shape(), (x.rows(), p.weight.rows())));
    }
    grad_y.t_matmul_acc(x, grad_w);
    if let Some(gb) = grad_b {
        let gb = gb.as_mut_slice();
        for r in 0..grad_y.rows() {
            for (g, v) in gb.iter_mut().zip(grad_y.row(r)) {
                *g += v;
            }
        }
    }
    grad_y.matmul(&p.weight)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Gradient of relu given the pre-activation; the kink at 0 takes slope 0.
pub fn relu_backward(pre: &Matrix, grad_y: &Matrix) -> Matrix {
    let mut g = grad_y.clone();
    for (gv, &p) in g.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

fn check_norm_params(x: &Matrix, gain: &[f64], shift: &[f64]) -> Result<(), NnError> {
    if gain.len() != x.cols() || shift.len() != x.cols() {
        return Err(NnError::Shape(format!(
            "layer_norm over {} columns needs gain/shift of that length, got {}/{}",
            x.cols(),
            gain.len(),
            shift.len()
        )));
    }
    Ok(())
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Row-wise normalization with population variance: `gain * (x - mean) / sqrt(var + eps) + shift`.
pub fn layer_norm(x: &Matrix, gain: &[f64], shift: &[f64], eps: f64) -> Result<Matrix, NnError> {
    check_norm_params(x, gain, shift)?;
    let mut out = x.clone();
    for r in 0..x.rows() {
        let (mean, var) = row_moments(x.row(r));
        let inv = 1.0 / (var + eps).sqrt();
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            let xhat = if var + eps > 0.0 { (*v - mean) * inv } else { 0.0 };
            *v = gain[c] * xhat + shift[c];
        }
    }
    Ok(out)
}

/// Returns `dx`; accumulates into `grad_gain` and `grad_shift`.
pub fn layer_norm_backward(
    x: &Matrix,
    gain: &[f64],
    eps: f64,
    grad_y: &Matrix,
    grad_gain: &mut [f64],
    grad_shift: &mut [f64],
) -> Result<Matrix, NnError> {
    if grad_y.shape() != x.shape() || gain.len() != x.cols() {
        return Err(NnError::dims("layer_norm_backward", grad_y.shape(), x.shape()));
    }
    let n = x.cols() as f64;
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut xhat = vec![0.0; x.cols()];
    let mut dxhat = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        let row = x.row(r);
        let (mean, var) = row_moments(row);
        if var + eps <= 0.0 {
            // constant row with eps = 0: output is the shift, no dependence on x
            for (c, g) in grad_y.row(r).iter().enumerate() {
                grad_shift[c] += g;
            }
            continue;
        }
        let inv = 1.0 / (var + eps).sqrt();
        let gy = grad_y.row(r);
        for c in 0..row.len() {
            xhat[c] = (row[c] - mean) * inv;
            dxhat[c] = gy[c] * gain[c];
            grad_gain[c] += gy[c] * xhat[c];
            grad_shift[c] += gy[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = inv * (dxhat[c] - mean_d - xhat[c] * mean_dx);
        }
    }
    Ok(dx)
}

/// One stage of a [`Sequential`] network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense(DenseParams),
    Relu,
    LayerNorm { gain: Matrix, shift: Matrix, eps: f64 },
}

impl Layer {
    pub fn layer_norm(width: usize, eps: f64) -> Self {
        Layer::LayerNorm {
            gain: Matrix::filled(1, width, 1.0),
            shift: Matrix::zeros(1, width),
            eps,
        }
    }

    fn params(&self) -> Vec<&Matrix> {
        match self {
            Layer::Dense(p) => std::iter::once(&p.weight).chain(p.bias.as_ref()).collect(),
            Layer::Relu => Vec::new(),
            Layer::LayerNorm { gain, shift, .. } => vec![gain, shift],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Layer::Dense(p) => std::iter::once(&mut p.weight)
                .chain(p.bias.as_mut())
                .collect(),
            Layer::Relu => Vec::new(),
            Layer::LayerNorm { gain, shift, .. } => vec![gain, shift],
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NnError> {
        match self {
            Layer::Dense(p) => dense_forward(p, x),
            Layer::Relu => Ok(relu(x)),
            Layer::LayerNorm { gain, shift, eps } => {
                layer_norm(x, gain.as_slice(), shift.as_slice(), *eps)
            }
        }
    }

    /// `grads` holds exactly this layer's parameter gradients, in `params()` order.
    pub fn backward(
        &self,
        input: &Matrix,
        grad_y: &Matrix,
        grads: &mut [Matrix],
    ) -> Result<Matrix, NnError> {
        match self {
            Layer::Dense(p) => {
                let (gw, rest) = grads.split_first_mut().expect("dense weight gradient");
                dense_backward(p, input, grad_y, gw, rest.first_mut())
            }
            Layer::Relu => Ok(relu_backward(input, grad_y)),
            Layer::LayerNorm { gain, eps, .. } => {
                let [gg, gs] = grads else {
                    unreachable!("layer norm has two parameter tensors")
                };
                layer_norm_backward(
                    input,
                    gain.as_slice(),
                    *eps,
                    grad_y,
                    gg.as_mut_slice(),
                    gs.as_mut_slice(),
                )
            }
        }
    }
}

/// Per-layer inputs recorded by [`Sequential::forward_cached`].
#[derive(Debug, Clone)]
pub struct SeqCache {
    inputs: Vec<Matrix>,
}

/// A chain of layers applied to `[batch x features]` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NnError> {
        self.layers.iter().try_fold(x.clone(), |h, l| l.forward(&h))
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, SeqCache), NnError> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let next = l.forward(&h)?;
            inputs.push(std::mem::replace(&mut h, next));
        }
        Ok((h, SeqCache { inputs }))
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(
        &self,
        cache: &SeqCache,
        grad_out: &Matrix,
        grads: &mut Gradients,
    ) -> Result<Matrix, NnError> {
        let counts: Vec<usize> = self.layers.iter().map(|l| l.params().len()).collect();
        let mut offsets = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for c in &counts {
            offsets.push(acc);
            acc += c;
        }
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let slot = &mut grads.tensors_mut()[offsets[i]..offsets[i] + counts[i]];
            g = layer.backward(&cache.inputs[i], &g, slot)?;
        }
        Ok(g)
    }
}

/// Stateful forward/backward driver over a borrowed [`Sequential`].
pub struct Tape<'a> {
    net: &'a Sequential,
    cache: Option<SeqCache>,
}

impl<'a> Tape<'a> {
    pub fn new(net: &'a Sequential) -> Self {
        Self { net, cache: None }
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        let (y, cache) = self.net.forward_cached(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Consumes the recorded pass; returns parameter gradients and `dLoss/dx`.
    pub fn backward(&mut self, loss_grad: &Matrix) -> Result<(Gradients, Matrix), NnError> {
        let cache = self.cache.take().ok_or(NnError::BackwardBeforeForward)?;
        let mut grads = Gradients::zeros_like(&self.net.params());
        let dx = self.net.backward(&cache, loss_grad, &mut grads)?;
        Ok((grads, dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn dense_identity_and_hand_dot() {
        let p = DenseParams::new(Matrix::identity(2), Some(Matrix::zeros(1, 2))).unwrap();
        assert_eq!(dense_forward(&p, &m(&[&[3.0, 4.0]])).unwrap(), m(&[&[3.0, 4.0]]));

        let p = DenseParams::new(m(&[&[1.0, 2.0]]), Some(m(&[&[1.0]]))).unwrap();
        assert_eq!(dense_forward(&p, &m(&[&[3.0, 4.0]])).unwrap(), m(&[&[12.0]]));
    }

    #[test]
    fn dense_dimension_error() {
        let p = DenseParams::new(Matrix::zeros(2, 3), None).unwrap();
        let err = dense_forward(&p, &m(&[&[1.0, 2.0]])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x2") && msg.contains("2x3"), "{msg}");
        assert!(DenseParams::new(Matrix::zeros(2, 3), Some(Matrix::zeros(1, 3))).is_err());
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&m(&[&[-1.0, 2.0]])), m(&[&[0.0, 2.0]]));
        assert_eq!(relu(&m(&[&[-1.0, -2.0]])), Matrix::zeros(1, 2));
        let x = m(&[&[-0.5, 0.0, 3.0]]);
        assert_eq!(relu(&relu(&x)), relu(&x));
    }

    #[test]
    fn layer_norm_hand_row() {
        let y = layer_norm(&m(&[&[1.0, 2.0, 3.0]]), &[1.0; 3], &[0.0; 3], 0.0).unwrap();
        let s = 1.5f64.sqrt();
        assert_abs_diff_eq!(y.as_slice(), &[-s, 0.0, s][..], epsilon = 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_and_zero_gain() {
        let y = layer_norm(&m(&[&[4.0, 4.0, 4.0]]), &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        assert_eq!(y.as_slice(), &[0.0; 3]);
        let y = layer_norm(&m(&[&[1.0, 5.0, 2.0]]), &[0.0; 3], &[0.5, -1.0, 2.0], 1e-5).unwrap();
        assert_eq!(y.as_slice(), &[0.5, -1.0, 2.0]);
        assert!(layer_norm(&m(&[&[1.0, 2.0]]), &[1.0; 3], &[0.0; 2], 1e-5).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::fan_in_uniform(20, 16, &mut rng);
        let y = layer_norm(&x, &[1.0; 16], &[0.0; 16], 1e-9).unwrap();
        for r in 0..y.rows() {
            let (mean, var) = row_moments(y.row(r));
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let net = Sequential::new(vec![Layer::Relu]);
        let mut tape = Tape::new(&net);
        assert_eq!(
            tape.backward(&Matrix::zeros(1, 1)).unwrap_err(),
            NnError::BackwardBeforeForward
        );
        tape.forward(&m(&[&[1.0]])).unwrap();
        tape.backward(&m(&[&[1.0]])).unwrap();
        // the pass is consumed
        assert!(tape.backward(&m(&[&[1.0]])).is_err());
    }

    #[test]
    fn single_dense_mse_matches_closed_form() {
        // loss = (1/O) sum (yhat - y)^2 ; dW = 2 (yhat - y) x^T / O
        let w = m(&[&[0.5, -1.0, 2.0], &[1.5, 0.25, -0.5]]);
        let net = Sequential::new(vec![Layer::Dense(DenseParams::new(w.clone(), None).unwrap())]);
        let x = m(&[&[1.0, 2.0, -3.0]]);
        let y = [0.5, -2.0];
        let mut tape = Tape::new(&net);
        let yhat = tape.forward(&x).unwrap();
        let o = y.len() as f64;
        let lg: Vec<f64> = yhat.as_slice().iter().zip(&y).map(|(a, b)| 2.0 * (a - b) / o).collect();
        let (grads, _) = tape.backward(&Matrix::row_vector(&lg)).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let expect = 2.0 * (yhat.get(0, i) - y[i]) * x.get(0, j) / o;
                assert_abs_diff_eq!(grads.tensors()[0].get(i, j), expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Sequential::new(vec![
            Layer::Dense(DenseParams::init(4, 6, true, &mut rng)),
            Layer::Relu,
            Layer::layer_norm(6, 1e-5),
            Layer::Dense(DenseParams::init(6, 2, true, &mut rng)),
        ]);
        let mut tape = Tape::new(&net);
        tape.forward(&Matrix::fan_in_uniform(3, 4, &mut rng)).unwrap();
        let (grads, dx) = tape.backward(&Matrix::zeros(3, 2)).unwrap();
        assert!(grads.tensors().iter().all(|g| g.max_abs() == 0.0));
        assert_eq!(dx.max_abs(), 0.0);
    }

    #[test]
    fn composed_backward_equals_manual_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let l1 = Layer::Dense(DenseParams::init(5, 7, true, &mut rng));
        let l2 = Layer::Relu;
        let l3 = Layer::Dense(DenseParams::init(7, 3, false, &mut rng));
        let net = Sequential::new(vec![l1.clone(), l2.clone(), l3.clone()]);
        let x = Matrix::fan_in_uniform(4, 5, &mut rng);
        let gy = Matrix::fan_in_uniform(4, 3, &mut rng);

        let (_, cache) = net.forward_cached(&x).unwrap();
        let mut grads = Gradients::zeros_like(&net.params());
        let dx = net.backward(&cache, &gy, &mut grads).unwrap();

        let h1 = l1.forward(&x).unwrap();
        let h2 = l2.forward(&h1).unwrap();
        let mut g3 = vec![Matrix::zeros(3, 7)];
        let d2 = l3.backward(&h2, &gy, &mut g3).unwrap();
        let d1 = l2.backward(&h1, &d2, &mut []).unwrap();
        let mut g1 = vec![Matrix::zeros(7, 5), Matrix::zeros(1, 7)];
        let d0 = l1.backward(&x, &d1, &mut g1).unwrap();

        assert_eq!(dx, d0);
        assert_eq!(grads.tensors()[0], g1[0]);
        assert_eq!(grads.tensors()[1], g1[1]);
        assert_eq!(grads.tensors()[2], g3[0]);
    }
}
