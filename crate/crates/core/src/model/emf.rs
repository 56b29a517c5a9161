//! The patch-mixer forecaster.
//!
//! Forward composition for one window `x ∈ R^L`:
//!
//! ```text
//! RevIN → patchify [N×P] → embed [N×D] → K mixer blocks [N×D]
//!       → relu → LayerNorm (per patch row, over D) → flatten (row-major, N·D)
//!       → head [O] → RevIN⁻¹
//! ```
//!
//! Each mixer block is `u' = u + W_t2·relu(W_t1·u)` (mixing across the N
//! patches) followed by `u' + relu(u'·W_p1ᵀ)·W_p2ᵀ` (mixing across the D
//! embedding features). No layer carries a bias.
//!
//! LayerNorm normalizes each patch row over D. The alternative reading,
//! normalizing the flattened N·D vector, is not implemented.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::{
    dense_backward, layer_norm, layer_norm_backward, relu, relu_backward, Differentiable,
    Gradients, Matrix, NnError, LAYER_NORM_EPS,
};

/// Division guard for the per-window standard deviation and lower bound on `|γ|`.
pub const EPS_REV: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmfConfig {
    /// Lookback steps `L`.
    pub lookback: usize,
    /// Horizon steps `O`.
    pub horizon: usize,
    /// Patch length `P`.
    pub patch_len: usize,
    /// Patch stride `S`.
    pub stride: usize,
    /// Patch embedding dimension `D`.
    pub embed_dim: usize,
    /// Mixer hidden dimension `D_h`.
    pub hidden_dim: usize,
    /// Number of mixer blocks `K`.
    pub blocks: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for EmfConfig {
    fn default() -> Self {
        Self {
            lookback: 336,
            horizon: 96,
            patch_len: 16,
            stride: 8,
            embed_dim: 128,
            hidden_dim: 256,
            blocks: 2,
            activation: Activation::Relu,
        }
    }
}

impl EmfConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.horizon == 0 {
            return fail("horizon must be >= 1".into());
        }
        if self.patch_len == 0 || self.patch_len > self.lookback {
            return fail(format!(
                "patch length {} must be in 1..={}",
                self.patch_len, self.lookback
            ));
        }
        if self.stride == 0 || self.stride > self.patch_len {
            return fail(format!("stride {} must be in 1..={}", self.stride, self.patch_len));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return fail("embedding and hidden dimensions must be >= 1".into());
        }
        if self.blocks == 0 {
            return fail("at least one mixer block is required".into());
        }
        if self.lookback < 2 {
            return fail("lookback must be >= 2 for the window standard deviation".into());
        }
        Ok(())
    }

    /// `N = floor((L - P) / S) + 1`.
    pub fn num_patches(&self) -> usize {
        (self.lookback - self.patch_len) / self.stride + 1
    }

    /// Closed-form parameter tally.
    pub fn param_count(&self) -> usize {
        let (n, d, dh) = (self.num_patches(), self.embed_dim, self.hidden_dim);
        2 + d * self.patch_len + self.blocks * (2 * n * dh + 2 * d * dh) + 2 * d + self.horizon * n * d
    }
}

/// Per-window normalization statistics plus the learnable affine pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevinStats {
    pub mu: f64,
    /// Sample (n-1) standard deviation of the window, unguarded.
    pub sigma: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl RevinStats {
    pub fn sigma_guarded(&self) -> f64 {
        self.sigma.max(EPS_REV)
    }
}

/// `γ (x - μ) / σ + δ` with the sample standard deviation.
pub fn revin_normalize(x: &[f64], gamma: f64, delta: f64) -> (Vec<f64>, RevinStats) {
    let (mu, sigma) = crate::data::mean_std(x);
    let stats = RevinStats {
        mu,
        sigma,
        gamma,
        delta,
    };
    let s = stats.sigma_guarded();
    (x.iter().map(|v| gamma * (v - mu) / s + delta).collect(), stats)
}

/// `σ (y - δ) / γ + μ`.
pub fn revin_denormalize(y_r: &[f64], stats: &RevinStats) -> Vec<f64> {
    let s = stats.sigma_guarded();
    y_r.iter()
        .map(|v| s * (v - stats.delta) / stats.gamma + stats.mu)
        .collect()
}

/// Row `i` is `x[iS .. iS + P)`, zero-filled past the end of `x`.
pub fn patchify(x_r: &[f64], patch_len: usize, stride: usize) -> Matrix {
    let n = (x_r.len() - patch_len) / stride + 1;
    let mut out = Matrix::zeros(n, patch_len);
    for i in 0..n {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = x_r.get(i * stride + j).copied().unwrap_or(0.0);
        }
    }
    out
}

/// `x_p W_dᵀ`: every patch through the shared embedding.
pub fn patch_embed(xp: &Matrix, w_d: &Matrix) -> Result<Matrix, NnError> {
    xp.matmul_t(w_d)
}

/// Weights of one mixer block.
#[derive(Debug, Clone, PartialEq)]
pub struct MixerBlock {
    /// `[D_h × N]`
    pub temporal_in: Matrix,
    /// `[N × D_h]`
    pub temporal_out: Matrix,
    /// `[D_h × D]`
    pub patch_in: Matrix,
    /// `[D × D_h]`
    pub patch_out: Matrix,
}

impl MixerBlock {
    fn init(n: usize, d: usize, dh: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            temporal_in: Matrix::fan_in_uniform(dh, n, rng),
            temporal_out: Matrix::fan_in_uniform(n, dh, rng),
            patch_in: Matrix::fan_in_uniform(dh, d, rng),
            patch_out: Matrix::fan_in_uniform(d, dh, rng),
        }
    }

    pub fn zeros(n: usize, d: usize, dh: usize) -> Self {
        Self {
            temporal_in: Matrix::zeros(dh, n),
            temporal_out: Matrix::zeros(n, dh),
            patch_in: Matrix::zeros(dh, d),
            patch_out: Matrix::zeros(d, dh),
        }
    }
}

struct BlockTrace {
    input: Matrix,
    /// `W_t1 · u`, pre-activation `[D_h × D]`
    temporal_pre: Matrix,
    mid: Matrix,
    /// `u' · W_p1ᵀ`, pre-activation `[N × D_h]`
    patch_pre: Matrix,
}

fn block_forward(u: &Matrix, b: &MixerBlock) -> Result<(Matrix, BlockTrace), NnError> {
    let temporal_pre = b.temporal_in.matmul(u)?;
    let mut mid = b.temporal_out.matmul(&relu(&temporal_pre))?;
    mid.add_assign(u)?;
    let patch_pre = mid.matmul_t(&b.patch_in)?;
    let mut out = relu(&patch_pre).matmul_t(&b.patch_out)?;
    out.add_assign(&mid)?;
    Ok((
        out,
        BlockTrace {
            input: u.clone(),
            temporal_pre,
            mid,
            patch_pre,
        },
    ))
}

/// One mixer block: temporal MLP with residual, then patch MLP with residual.
pub fn stb_block(u: &Matrix, block: &MixerBlock) -> Result<Matrix, NnError> {
    Ok(block_forward(u, block)?.0)
}

/// `grads` = [temporal_in, temporal_out, patch_in, patch_out].
fn block_backward(b: &MixerBlock, tr: &BlockTrace, d_out: &Matrix, grads: &mut [Matrix]) -> Result<Matrix, NnError> {
    let [g_tin, g_tout, g_pin, g_pout] = grads else {
        unreachable!("mixer block has four tensors")
    };
    // patch branch: out = mid + relu(mid W_p1ᵀ) W_p2ᵀ
    let patch_hidden = relu(&tr.patch_pre);
    d_out.t_matmul_acc(&patch_hidden, g_pout);
    let d_hidden = relu_backward(&tr.patch_pre, &d_out.matmul(&b.patch_out)?);
    d_hidden.t_matmul_acc(&tr.mid, g_pin);
    let mut d_mid = d_hidden.matmul(&b.patch_in)?;
    d_mid.add_assign(d_out)?;

    // temporal branch: mid = u + W_t2 relu(W_t1 u)
    let temporal_hidden = relu(&tr.temporal_pre);
    g_tout.add_assign(&d_mid.matmul_t(&temporal_hidden)?)?;
    let d_pre = relu_backward(&tr.temporal_pre, &b.temporal_out.t_matmul(&d_mid)?);
    g_tin.add_assign(&d_pre.matmul_t(&tr.input)?)?;
    let mut d_u = b.temporal_in.t_matmul(&d_pre)?;
    d_u.add_assign(&d_mid)?;
    Ok(d_u)
}

/// Full parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct EmfModel {
    config: EmfConfig,
    /// `γ`, 1×1
    pub gamma: Matrix,
    /// `δ`, 1×1
    pub delta: Matrix,
    /// `W_d`, `[D × P]`
    pub embed: Matrix,
    pub blocks: Vec<MixerBlock>,
    /// `[1 × D]`
    pub norm_gain: Matrix,
    /// `[1 × D]`
    pub norm_shift: Matrix,
    /// `W_head`, `[O × N·D]`
    pub head: Matrix,
}

/// Values retained from [`EmfModel::forward_cached`].
pub struct EmfTrace {
    stats: RevinStats,
    patches: Matrix,
    blocks: Vec<BlockTrace>,
    /// STB output before the final activation.
    backbone: Matrix,
    activated: Matrix,
    flat: Matrix,
    y_r: Vec<f64>,
}

impl EmfModel {
    /// Seeded initialization: fan-in uniform weights, `γ = 1`, `δ = 0`, unit LayerNorm.
    pub fn new(config: EmfConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.num_patches();
        let (d, dh) = (config.embed_dim, config.hidden_dim);
        let embed = Matrix::fan_in_uniform(d, config.patch_len, &mut rng);
        let blocks = (0..config.blocks)
            .map(|_| MixerBlock::init(n, d, dh, &mut rng))
            .collect();
        let head = Matrix::fan_in_uniform(config.horizon, n * d, &mut rng);
        Ok(Self {
            config,
            gamma: Matrix::filled(1, 1, 1.0),
            delta: Matrix::zeros(1, 1),
            embed,
            blocks,
            norm_gain: Matrix::filled(1, d, 1.0),
            norm_shift: Matrix::zeros(1, d),
            head,
        })
    }

    /// Rebuilds a model from tensors in [`Differentiable::params`] order.
    pub fn from_tensors(config: EmfConfig, tensors: Vec<Matrix>) -> Result<Self, ModelError> {
        let mut m = Self::new(config, 0)?;
        let expected: Vec<(usize, usize)> = m.params().iter().map(|p| p.shape()).collect();
        if tensors.len() != expected.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, (dst, src)) in m.params_mut().into_iter().zip(tensors).enumerate() {
            if dst.shape() != src.shape() {
                return Err(ModelError::Config(format!(
                    "tensor {i} has shape {:?}, expected {:?}",
                    src.shape(),
                    expected[i]
                )));
            }
            *dst = src;
        }
        Ok(m)
    }

    pub fn config(&self) -> &EmfConfig {
        &self.config
    }

    /// Names in [`Differentiable::params`] order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["revin.gamma".to_string(), "revin.delta".into(), "embed".into()];
        for k in 0..self.blocks.len() {
            for part in ["temporal_in", "temporal_out", "patch_in", "patch_out"] {
                names.push(format!("blocks.{k}.{part}"));
            }
        }
        names.extend(["norm.gain".into(), "norm.shift".into(), "head".into()]);
        names
    }

    fn check_len(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.config.lookback {
            return Err(NnError::Shape(format!(
                "input window has length {}, model expects {}",
                x.len(),
                self.config.lookback
            )));
        }
        Ok(())
    }
}

impl Differentiable for EmfModel {
    type Cache = EmfTrace;

    fn params(&self) -> Vec<&Matrix> {
        let mut p = vec![&self.gamma, &self.delta, &self.embed];
        for b in &self.blocks {
            p.extend([&b.temporal_in, &b.temporal_out, &b.patch_in, &b.patch_out]);
        }
        p.extend([&self.norm_gain, &self.norm_shift, &self.head]);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = vec![&mut self.gamma, &mut self.delta, &mut self.embed];
        for b in &mut self.blocks {
            p.extend([
                &mut b.temporal_in,
                &mut b.temporal_out,
                &mut b.patch_in,
                &mut b.patch_out,
            ]);
        }
        p.extend([&mut self.norm_gain, &mut self.norm_shift, &mut self.head]);
        p
    }

    fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, EmfTrace), NnError> {
        self.check_len(x)?;
        let c = &self.config;
        let (x_r, stats) = revin_normalize(x, self.gamma.get(0, 0), self.delta.get(0, 0));
        let patches = patchify(&x_r, c.patch_len, c.stride);
        let mut u = patch_embed(&patches, &self.embed)?;
        let mut traces = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, tr) = block_forward(&u, b)?;
            traces.push(tr);
            u = next;
        }
        let activated = relu(&u);
        let normed = layer_norm(
            &activated,
            self.norm_gain.as_slice(),
            self.norm_shift.as_slice(),
            LAYER_NORM_EPS,
        )?;
        let flat = Matrix::row_vector(normed.as_slice());
        let y_r = flat.matmul_t(&self.head)?.into_vec();
        let y = revin_denormalize(&y_r, &stats);
        Ok((
            y,
            EmfTrace {
                stats,
                patches,
                blocks: traces,
                backbone: u,
                activated,
                flat,
                y_r,
            },
        ))
    }

    fn backward(
        &self,
        x: &[f64],
        tr: &EmfTrace,
        grad_out: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, NnError> {
        self.check_len(x)?;
        let c = &self.config;
        let (n, d) = (c.num_patches(), c.embed_dim);
        let g = grads.tensors_mut();
        let k = self.blocks.len();
        let (g_gamma, rest) = g.split_first_mut().expect("gamma");
        let (g_delta, rest) = rest.split_first_mut().expect("delta");
        let (g_embed, rest) = rest.split_first_mut().expect("embed");
        let (g_blocks, rest) = rest.split_at_mut(4 * k);
        let [g_gain, g_shift, g_head] = rest else {
            unreachable!("norm and head tensors")
        };

        let RevinStats {
            mu: _,
            sigma: _,
            gamma,
            delta,
        } = tr.stats;
        let sg = tr.stats.sigma_guarded();

        // RevIN⁻¹: y = sg (y_r - δ)/γ + μ
        let mut d_yr = vec![0.0; grad_out.len()];
        let (mut d_mu, mut d_sigma) = (0.0, 0.0);
        for (j, &gj) in grad_out.iter().enumerate() {
            let centered = tr.y_r[j] - delta;
            d_yr[j] = gj * sg / gamma;
            d_mu += gj;
            d_sigma += gj * centered / gamma;
            g_delta.as_mut_slice()[0] -= gj * sg / gamma;
            g_gamma.as_mut_slice()[0] -= gj * sg * centered / (gamma * gamma);
        }

        // head
        let d_yr = Matrix::row_vector(&d_yr);
        d_yr.t_matmul_acc(&tr.flat, g_head);
        let d_flat = d_yr.matmul(&self.head)?;
        let d_norm = Matrix::from_vec(n, d, d_flat.into_vec())?;

        let d_act = layer_norm_backward(
            &tr.activated,
            self.norm_gain.as_slice(),
            LAYER_NORM_EPS,
            &d_norm,
            g_gain.as_mut_slice(),
            g_shift.as_mut_slice(),
        )?;
        let mut d_u = relu_backward(&tr.backbone, &d_act);

        for (i, b) in self.blocks.iter().enumerate().rev() {
            d_u = block_backward(b, &tr.blocks[i], &d_u, &mut g_blocks[4 * i..4 * i + 4])?;
        }

        let d_patches = dense_backward_no_bias(&self.embed, &tr.patches, &d_u, g_embed)?;

        // patchify scatter; padded positions have no source index
        let l = c.lookback;
        let mut d_xr = vec![0.0; l];
        for i in 0..d_patches.rows() {
            for (j, v) in d_patches.row(i).iter().enumerate() {
                if let Some(slot) = d_xr.get_mut(i * c.stride + j) {
                    *slot += v;
                }
            }
        }

        // RevIN: x_r = γ z + δ with z = (x - μ)/sg
        let z: Vec<f64> = x.iter().map(|v| (v - tr.stats.mu) / sg).collect();
        let mut sum_dz = 0.0;
        let mut sum_dz_z = 0.0;
        for (dv, zv) in d_xr.iter().zip(&z) {
            g_gamma.as_mut_slice()[0] += dv * zv;
            g_delta.as_mut_slice()[0] += dv;
            sum_dz += gamma * dv;
            sum_dz_z += gamma * dv * zv;
        }
        let guarded = tr.stats.sigma < EPS_REV;
        d_mu -= sum_dz / sg;
        if !guarded {
            d_sigma -= sum_dz_z / sg;
        } else {
            d_sigma = 0.0;
        }
        let lf = l as f64;
        Ok((0..l)
            .map(|i| gamma * d_xr[i] / sg + d_mu / lf + d_sigma * z[i] / (lf - 1.0))
            .collect())
    }

    fn constrain(&mut self) {
        let g = self.gamma.get(0, 0);
        if g.abs() < EPS_REV {
            self.gamma.set(0, 0, if g < 0.0 { -EPS_REV } else { EPS_REV });
        }
    }
}

fn dense_backward_no_bias(w: &Matrix, x: &Matrix, d_y: &Matrix, g_w: &mut Matrix) -> Result<Matrix, NnError> {
    let p = crate::nn::DenseParams {
        weight: w.clone(),
        bias: None,
    };
    dense_backward(&p, x, d_y, g_w, None)
}
