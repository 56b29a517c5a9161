//! Decomposition-linear baseline: a centered moving average splits the
//! window into trend and remainder, each mapped by its own `[O × L]` matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::nn::{dot, Differentiable, Gradients, Matrix, NnError};

pub const DEFAULT_HALF_WINDOW: usize = 12;

/// Trend is the `(2m+1)`-point centered mean over the edge-replicated
/// series; season is the remainder.
pub fn dlinear_decompose(x: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let l = x.len() as isize;
    let k = (2 * m + 1) as f64;
    let at = |i: isize| x[i.clamp(0, l - 1) as usize];
    let trend: Vec<f64> = (0..l)
        .map(|t| (t - m as isize..=t + m as isize).map(at).sum::<f64>() / k)
        .collect();
    let season = x.iter().zip(&trend).map(|(a, b)| a - b).collect();
    (trend, season)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DLinearModel {
    pub half_window: usize,
    /// `[O × L]`
    pub w_trend: Matrix,
    /// `[O × L]`
    pub w_season: Matrix,
}

impl DLinearModel {
    pub fn new(lookback: usize, horizon: usize, half_window: usize, seed: u64) -> Result<Self, ModelError> {
        if half_window == 0 || lookback == 0 || horizon == 0 {
            return Err(ModelError::Config(
                "dlinear needs lookback, horizon and half-window >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            half_window,
            w_trend: Matrix::fan_in_uniform(horizon, lookback, &mut rng),
            w_season: Matrix::fan_in_uniform(horizon, lookback, &mut rng),
        })
    }

    pub fn lookback(&self) -> usize {
        self.w_trend.cols()
    }

    pub fn horizon(&self) -> usize {
        self.w_trend.rows()
    }
}

pub struct DLinearTrace {
    trend: Vec<f64>,
    season: Vec<f64>,
}

impl Differentiable for DLinearModel {
    type Cache = DLinearTrace;

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w_trend, &self.w_season]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_trend, &mut self.w_season]
    }

    fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, DLinearTrace), NnError> {
        if x.len() != self.lookback() {
            return Err(NnError::Shape(format!(
                "input window has length {}, model expects {}",
                x.len(),
                self.lookback()
            )));
        }
        let (trend, season) = dlinear_decompose(x, self.half_window);
        let y = (0..self.horizon())
            .map(|o| dot(self.w_trend.row(o), &trend) + dot(self.w_season.row(o), &season))
            .collect();
        Ok((y, DLinearTrace { trend, season }))
    }

    fn backward(
        &self,
        x: &[f64],
        tr: &DLinearTrace,
        grad_out: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, NnError> {
        let l = x.len();
        let g = grads.tensors_mut();
        let mut d_trend = vec![0.0; l];
        let mut d_season = vec![0.0; l];
        for (o, &go) in grad_out.iter().enumerate() {
            for (j, gw) in g[0].row_mut(o).iter_mut().enumerate() {
                *gw += go * tr.trend[j];
            }
            for (j, gw) in g[1].row_mut(o).iter_mut().enumerate() {
                *gw += go * tr.season[j];
            }
            for j in 0..l {
                d_trend[j] += go * self.w_trend.get(o, j);
                d_season[j] += go * self.w_season.get(o, j);
            }
        }
        // season = x - trend, so trend's adjoint sees (d_trend - d_season)
        let m = self.half_window as isize;
        let k = (2 * self.half_window + 1) as f64;
        let mut dx = d_season.clone();
        for t in 0..l as isize {
            let share = (d_trend[t as usize] - d_season[t as usize]) / k;
            for i in t - m..=t + m {
                dx[i.clamp(0, l as isize - 1) as usize] += share;
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn decompose_examples() {
        let (t, s) = dlinear_decompose(&[3.0; 7], 2);
        assert_eq!(t, vec![3.0; 7]);
        assert_eq!(s, vec![0.0; 7]);

        let (t, s) = dlinear_decompose(&[1.0, 2.0, 3.0], 1);
        assert_abs_diff_eq!(t.as_slice(), &[4.0 / 3.0, 2.0, 8.0 / 3.0][..], epsilon = 1e-15);
        assert_abs_diff_eq!(s.as_slice(), &[-1.0 / 3.0, 0.0, 1.0 / 3.0][..], epsilon = 1e-15);

        let ramp: Vec<f64> = (0..20).map(|i| 0.5 * i as f64 - 2.0).collect();
        let (t, _) = dlinear_decompose(&ramp, 3);
        for i in 3..17 {
            assert_abs_diff_eq!(t[i], ramp[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_weights_forecast_zero() {
        let mut m = DLinearModel::new(10, 4, 2, 0).unwrap();
        m.w_trend.fill(0.0);
        m.w_season.fill(0.0);
        assert_eq!(m.forward(&[1.0; 10]).unwrap(), vec![0.0; 4]);
        assert!(DLinearModel::new(10, 4, 0, 0).is_err());
    }

    #[test]
    fn gradient_check_is_near_exact() {
        let m = DLinearModel::new(8, 2, 2, 4).unwrap();
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos() + 0.1 * i as f64).collect();
        let err = gradient_check(&m, &x, &[0.3, -1.2], 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    proptest! {
        #[test]
        fn decomposition_exact(x in prop::collection::vec(-10.0f64..10.0, 1..50), m in 1usize..8) {
            let (t, s) = dlinear_decompose(&x, m);
            for i in 0..x.len() {
                prop_assert!((t[i] + s[i] - x[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn superposition(
            x in prop::collection::vec(-5.0f64..5.0, 16),
            z in prop::collection::vec(-5.0f64..5.0, 16),
            a in -3.0f64..3.0,
            seed in 0u64..100,
        ) {
            let model = DLinearModel::new(16, 4, 3, seed).unwrap();
            let fx = model.forward(&x).unwrap();
            let fz = model.forward(&z).unwrap();
            let sum: Vec<f64> = x.iter().zip(&z).map(|(p, q)| p + q).collect();
            let scaled: Vec<f64> = x.iter().map(|p| a * p).collect();
            for (i, v) in model.forward(&sum).unwrap().iter().enumerate() {
                prop_assert!((v - fx[i] - fz[i]).abs() < 1e-10);
            }
            for (i, v) in model.forward(&scaled).unwrap().iter().enumerate() {
                prop_assert!((v - a * fx[i]).abs() < 1e-10);
            }
        }
    }
}
