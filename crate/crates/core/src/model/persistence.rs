use crate::nn::{Differentiable, Gradients, Matrix, NnError};

/// Repeats the last observed value across the horizon.
pub fn persistence_forecast(x: &[f64], horizon: usize) -> Vec<f64> {
    vec![x.last().copied().unwrap_or(0.0); horizon]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PersistenceModel {
    pub lookback: usize,
    pub horizon: usize,
}

impl Differentiable for PersistenceModel {
    type Cache = ();

    fn params(&self) -> Vec<&Matrix> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        Vec::new()
    }

    fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, ()), NnError> {
        if x.len() != self.lookback || x.is_empty() {
            return Err(NnError::Shape(format!(
                "input window has length {}, model expects {}",
                x.len(),
                self.lookback
            )));
        }
        Ok((persistence_forecast(x, self.horizon), ()))
    }

    fn backward(&self, x: &[f64], _: &(), grad_out: &[f64], _: &mut Gradients) -> Result<Vec<f64>, NnError> {
        let mut dx = vec![0.0; x.len()];
        dx[x.len() - 1] = grad_out.iter().sum();
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeats_last_value() {
        assert_eq!(persistence_forecast(&[1.0, 3.0, 7.0], 4), vec![7.0; 4]);
        assert_eq!(persistence_forecast(&[2.0, 5.0], 1), vec![5.0]);
        let m = PersistenceModel { lookback: 3, horizon: 2 };
        let y = m.forward(&[4.0; 3]).unwrap();
        let mse: f64 = y.iter().map(|v| (v - 4.0).powi(2)).sum();
        assert_eq!(mse, 0.0);
        assert!(m.forward(&[1.0; 2]).is_err());
    }
}
