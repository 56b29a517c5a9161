//! Augmented Dickey-Fuller test with constant and linear trend.
//!
//! The levels regression
//!
//! ```text
//! x_t = c + w1·t + w2·x_{t-1} + Σ_{i=1..p} φ_i Δx_{t-i} + ε_t
//! ```
//!
//! is fitted by least squares and the statistic is `(ŵ2 - 1) / SE(ŵ2)`.
//! The lag order `p` minimizes AIC over `0..=max_lag` on the sample common
//! to all candidate lags; the chosen lag is then refitted on its full sample.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// Asymptotic critical values for the constant + trend case.
pub const CRITICAL_VALUES: [(f64, f64); 3] = [(0.01, -3.96), (0.05, -3.41), (0.10, -3.12)];

pub const MIN_LEN: usize = 20;

/// Rejection of the unit-root null at each embedded level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejections {
    #[serde(rename = "0.01")]
    pub at_01: bool,
    #[serde(rename = "0.05")]
    pub at_05: bool,
    #[serde(rename = "0.10")]
    pub at_10: bool,
}

impl Rejections {
    pub fn from_statistic(stat: f64) -> Self {
        Self {
            at_01: stat < CRITICAL_VALUES[0].1,
            at_05: stat < CRITICAL_VALUES[1].1,
            at_10: stat < CRITICAL_VALUES[2].1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub lag_order: usize,
    pub reject_at: Rejections,
    /// Observations in the final regression, `T - p - 1`.
    pub n_effective: usize,
}

/// `floor(12 (T/100)^(1/4))`.
pub fn schwert_max_lag(len: usize) -> usize {
    (12.0 * (len as f64 / 100.0).powf(0.25)).floor() as usize
}

pub(crate) struct OlsFit {
    pub beta: DVector<f64>,
    pub se: DVector<f64>,
    pub rss: f64,
}

/// Least squares via Householder QR; fails on a numerically rank-deficient design.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, AnalysisError> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(AnalysisError::TooShort {
            what: "regression",
            required: k + 1,
            actual: n,
        });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max) || diag_max == 0.0 {
        return Err(AnalysisError::RankDeficient);
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(AnalysisError::RankDeficient)?;
    let resid = y - x * &beta;
    let rss = resid.norm_squared();
    let s2 = rss / (n - k) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(AnalysisError::RankDeficient)?;
    let se = DVector::from_iterator(k, (0..k).map(|j| (s2 * r_inv.row(j).norm_squared()).sqrt()));
    Ok(OlsFit { beta, se, rss })
}

/// Design for lag `p` over rows `t = first..T` (0-based): columns are
/// `[1, t+1, x_{t-1}, Δx_{t-1}, …, Δx_{t-p}]`.
fn design(x: &[f64], p: usize, first: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.len() - first;
    let k = 3 + p;
    let mut m = DMatrix::zeros(n, k);
    let mut y = DVector::zeros(n);
    for (row, t) in (first..x.len()).enumerate() {
        y[row] = x[t];
        m[(row, 0)] = 1.0;
        m[(row, 1)] = (t + 1) as f64;
        m[(row, 2)] = x[t - 1];
        for i in 1..=p {
            m[(row, 2 + i)] = x[t - i] - x[t - i - 1];
        }
    }
    (m, y)
}

/// Statistic for a fixed lag order on that lag's full sample.
pub fn adf_statistic(x: &[f64], lag: usize) -> Result<f64, AnalysisError> {
    if x.len() < lag + 2 {
        return Err(AnalysisError::TooShort {
            what: "adf regression",
            required: lag + 2,
            actual: x.len(),
        });
    }
    let (m, y) = design(x, lag, lag + 1);
    let fit = ols(&m, &y)?;
    Ok((fit.beta[2] - 1.0) / fit.se[2])
}

pub fn adf_test(x: &[f64], max_lag: Option<usize>) -> Result<AdfResult, AnalysisError> {
    let t = x.len();
    if t < MIN_LEN {
        return Err(AnalysisError::TooShort {
            what: "adf test",
            required: MIN_LEN,
            actual: t,
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(AnalysisError::Invalid(format!("non-finite value at index {i}")));
    }
    // keep at least one residual degree of freedom on the common sample
    let cap = (t - 5) / 2;
    let max_lag = max_lag.unwrap_or_else(|| schwert_max_lag(t)).min(cap);

    let mut best: Option<(f64, usize)> = None;
    for p in 0..=max_lag {
        let (m, y) = design(x, p, max_lag + 1);
        let fit = ols(&m, &y)?;
        let n = y.len() as f64;
        let aic = n * (fit.rss / n).ln() + 2.0 * (3 + p) as f64;
        if best.is_none_or(|(b, _)| aic < b) {
            best = Some((aic, p));
        }
    }
    let lag_order = best.map_or(0, |(_, p)| p);
    let statistic = adf_statistic(x, lag_order)?;
    Ok(AdfResult {
        statistic,
        lag_order,
        reject_at: Rejections::from_statistic(statistic),
        n_effective: t - lag_order - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use rayon::prelude::*;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn walk(seed: u64, n: usize) -> Vec<f64> {
        let mut acc = 0.0;
        noise(seed, n)
            .into_iter()
            .map(|e| {
                acc += e;
                acc
            })
            .collect()
    }

    /// Independent route: Δx_t on [1, t, x_{t-1}, lagged Δ]; the t-ratio on
    /// x_{t-1} is the same statistic.
    fn differenced_form(x: &[f64], p: usize) -> f64 {
        let first = p + 1;
        let n = x.len() - first;
        let mut m = DMatrix::zeros(n, 3 + p);
        let mut y = DVector::zeros(n);
        for (row, t) in (first..x.len()).enumerate() {
            y[row] = x[t] - x[t - 1];
            m[(row, 0)] = 1.0;
            m[(row, 1)] = (t + 1) as f64;
            m[(row, 2)] = x[t - 1];
            for i in 1..=p {
                m[(row, 2 + i)] = x[t - i] - x[t - i - 1];
            }
        }
        // normal equations, deliberately not the QR path
        let xtx = m.transpose() * &m;
        let inv = xtx.try_inverse().unwrap();
        let beta = &inv * m.transpose() * &y;
        let resid = &y - &m * &beta;
        let s2 = resid.norm_squared() / (n - 3 - p) as f64;
        beta[2] / (s2 * inv[(2, 2)]).sqrt()
    }

    #[test]
    fn schwert_bound() {
        assert_eq!(schwert_max_lag(100), 12);
        assert_eq!(schwert_max_lag(2000), 25);
    }

    #[test]
    fn size_errors() {
        assert!(matches!(adf_test(&[1.0; 19], None), Err(AnalysisError::TooShort { .. })));
        assert!(matches!(adf_test(&[1.0; 40], Some(0)), Err(AnalysisError::RankDeficient)));
    }

    #[test]
    fn reparameterization_equivalence() {
        let x = walk(5, 300);
        for p in [0, 1, 4] {
            let a = adf_statistic(&x, p).unwrap();
            let b = differenced_form(&x, p);
            assert!((a - b).abs() < 1e-8, "p={p}: {a} vs {b}");
        }
    }

    #[test]
    fn affine_equivariance() {
        let x = walk(8, 500);
        let base = adf_test(&x, None).unwrap();
        for (a, b) in [(2.5, -10.0), (-0.3, 4.0)] {
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r = adf_test(&y, None).unwrap();
            assert_eq!(r.lag_order, base.lag_order);
            assert!((r.statistic - base.statistic).abs() < 1e-8);
        }
    }

    #[test]
    fn result_invariants() {
        let x = noise(2, 400);
        let r = adf_test(&x, Some(6)).unwrap();
        assert!(r.lag_order <= 6);
        assert_eq!(r.n_effective, 400 - r.lag_order - 1);
        assert!(r.n_effective > 3 + r.lag_order);
        let rej = r.reject_at;
        assert!(!rej.at_01 || (rej.at_05 && rej.at_10));
        assert!(!rej.at_05 || rej.at_10);
    }

    #[test]
    fn trend_stationary_rejects() {
        let mut hits = 0;
        for seed in 0..20 {
            let x: Vec<f64> = noise(seed, 2000)
                .iter()
                .enumerate()
                .map(|(t, e)| 0.01 * t as f64 + e)
                .collect();
            hits += adf_test(&x, None).unwrap().reject_at.at_05 as usize;
        }
        assert_eq!(hits, 20);
    }

    #[test]
    fn random_walk_rarely_rejects() {
        let rejections: usize = (0..40u64)
            .into_par_iter()
            .map(|s| adf_test(&walk(1000 + s, 2000), None).unwrap().reject_at.at_05 as usize)
            .sum();
        assert!(rejections <= 6, "{rejections}/40");
    }

    /// Monte Carlo quantiles of the lag-0 statistic under a driftless random
    /// walk, T = 1000, against the embedded constants.
    #[test]
    fn critical_values_match_simulation() {
        let reps = 20_000u64;
        let mut stats: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|s| adf_statistic(&walk(50_000 + s, 1000), 0).unwrap())
            .collect();
        stats.sort_by(f64::total_cmp);
        for (level, cv) in CRITICAL_VALUES {
            let q = stats[(level * reps as f64) as usize];
            assert!((q - cv).abs() <= 0.05, "level {level}: simulated {q}, embedded {cv}");
        }
    }
}
