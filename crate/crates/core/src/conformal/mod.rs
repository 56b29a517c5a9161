//! Split conformal prediction over any point forecaster.
//!
//! Absolute forecast errors on a held-out calibration set give per-step
//! radii `ε̂_t`; multi-step bands use a Bonferroni split of `α` across the
//! `O` horizon steps so the joint miscoverage stays below `α`. The module
//! also scores bands: individual and joint coverage, mean interval width,
//! and the weighted-coverage / width trade-off score used to rank
//! forecasters against each other.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("no calibration examples")]
    Empty,
    #[error("{what}: expected {expected}, got {actual}")]
    Misaligned {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error(
        "insufficient calibration data: alpha = {alpha} needs rank {rank} of {m} residuals; \
         use at least {required} calibration examples"
    )]
    InsufficientCalibration {
        m: usize,
        rank: usize,
        required: usize,
        alpha: f64,
    },
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("{name} must lie in [0, 1], got {value}")]
    BadWeight { name: &'static str, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("trade-off scores need at least two reports, got {0}")]
    TooFewReports(usize),
}

/// Absolute calibration residuals, one row per example and one column per step.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    residuals: Matrix,
}

impl CalibrationSet {
    pub fn new(residuals: Matrix) -> Result<Self, ConformalError> {
        if residuals.rows() == 0 || residuals.cols() == 0 {
            return Err(ConformalError::Empty);
        }
        if residuals.as_slice().iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(ConformalError::NonFinite("calibration residuals"));
        }
        Ok(Self { residuals })
    }

    pub fn m(&self) -> usize {
        self.residuals.rows()
    }

    pub fn horizon(&self) -> usize {
        self.residuals.cols()
    }

    pub fn residuals(&self) -> &Matrix {
        &self.residuals
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.m()).map(|i| self.residuals.get(i, t)).collect()
    }
}

/// Per-step radii of symmetric prediction intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalBand {
    pub epsilons: Vec<f64>,
    pub alpha: f64,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Fraction of (example, step) pairs covered.
    pub ic: f64,
    /// Fraction of examples covered at every step.
    pub jc: f64,
    /// Mean interval width.
    pub miw: f64,
    pub n_test: usize,
}

/// How the width z-score enters the trade-off score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthSign {
    /// `1 / (1 + e^{-z})`: narrower intervals score higher.
    #[default]
    Intent,
    /// `1 / (1 + e^{z})` as literally written, which rewards wider intervals.
    Verbatim,
}

fn check_alpha(alpha: f64) -> Result<(), ConformalError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ConformalError::BadAlpha(alpha))
    }
}

/// 1-based rank `⌈(m + 1)(1 - α)⌉`.
///
/// The product is nudged down before the ceiling so that values like
/// `20 · 0.95` that land a few ulps above an integer round to it.
pub fn quantile_rank(m: usize, alpha: f64) -> usize {
    let x = (m + 1) as f64 * (1.0 - alpha);
    (x - 1e-9 * x.max(1.0)).ceil().max(1.0) as usize
}

/// Smallest calibration size whose rank fits, `≈ ⌈1/α⌉ - 1`.
pub fn min_calibration_size(alpha: f64) -> usize {
    let mut m = ((1.0 / alpha - 1.0) - 1e-9).ceil().max(1.0) as usize;
    while quantile_rank(m, alpha) > m {
        m += 1;
    }
    while m > 1 && quantile_rank(m - 1, alpha) < m {
        m -= 1;
    }
    m
}

/// Elementwise `|y - ŷ|` for aligned forecast/target rows.
pub fn collect_residuals<F, T>(forecasts: &[F], targets: &[T]) -> Result<CalibrationSet, ConformalError>
where
    F: AsRef<[f64]>,
    T: AsRef<[f64]>,
{
    if forecasts.is_empty() {
        return Err(ConformalError::Empty);
    }
    if forecasts.len() != targets.len() {
        return Err(ConformalError::Misaligned {
            what: "target rows",
            expected: forecasts.len(),
            actual: targets.len(),
        });
    }
    let o = forecasts[0].as_ref().len();
    let mut data = Vec::with_capacity(forecasts.len() * o);
    for (f, y) in forecasts.iter().zip(targets) {
        let (f, y) = (f.as_ref(), y.as_ref());
        for (what, len) in [("forecast length", f.len()), ("target length", y.len())] {
            if len != o {
                return Err(ConformalError::Misaligned {
                    what,
                    expected: o,
                    actual: len,
                });
            }
        }
        data.extend(f.iter().zip(y).map(|(a, b)| (b - a).abs()));
    }
    let residuals = Matrix::from_vec(forecasts.len(), o, data).expect("sizes agree");
    CalibrationSet::new(residuals)
}

/// The `⌈(m + 1)(1 - α)⌉`-th smallest residual.
pub fn critical_epsilon(residuals: &[f64], alpha: f64) -> Result<f64, ConformalError> {
    check_alpha(alpha)?;
    if residuals.is_empty() {
        return Err(ConformalError::Empty);
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(ConformalError::NonFinite("residuals"));
    }
    let m = residuals.len();
    let rank = quantile_rank(m, alpha);
    if rank > m {
        return Err(ConformalError::InsufficientCalibration {
            m,
            rank,
            required: min_calibration_size(alpha),
            alpha,
        });
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

/// Per-step radii at the Bonferroni level `α / O`.
pub fn calibrate_multistep(cal: &CalibrationSet, alpha: f64) -> Result<ConformalBand, ConformalError> {
    check_alpha(alpha)?;
    let per_step = alpha / cal.horizon() as f64;
    let epsilons = (0..cal.horizon())
        .map(|t| critical_epsilon(&cal.column(t), per_step))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| match e {
            // report the caller's alpha; the minimum size already reflects α/O
            ConformalError::InsufficientCalibration { m, rank, required, .. } => {
                ConformalError::InsufficientCalibration { m, rank, required, alpha }
            }
            other => other,
        })?;
    Ok(ConformalBand {
        epsilons,
        alpha,
        m: cal.m(),
    })
}

/// `[ŷ_t - ε̂_t, ŷ_t + ε̂_t]` per step.
pub fn predict_interval(forecast: &[f64], band: &ConformalBand) -> Result<Vec<[f64; 2]>, ConformalError> {
    if forecast.len() != band.epsilons.len() {
        return Err(ConformalError::Misaligned {
            what: "forecast length",
            expected: band.epsilons.len(),
            actual: forecast.len(),
        });
    }
    Ok(forecast
        .iter()
        .zip(&band.epsilons)
        .map(|(y, e)| [y - e, y + e])
        .collect())
}

/// IC, JC and mean width over a test set; bounds are inclusive.
pub fn coverage_metrics<I, T>(intervals: &[I], targets: &[T]) -> Result<CoverageReport, ConformalError>
where
    I: AsRef<[[f64; 2]]> + Sync,
    T: AsRef<[f64]> + Sync,
{
    if intervals.is_empty() {
        return Err(ConformalError::Empty);
    }
    if intervals.len() != targets.len() {
        return Err(ConformalError::Misaligned {
            what: "target rows",
            expected: intervals.len(),
            actual: targets.len(),
        });
    }
    let o = intervals[0].as_ref().len();
    if o == 0 {
        return Err(ConformalError::Empty);
    }
    // (covered steps, all covered, summed width) per example, reduced in order
    let per_example = intervals
        .par_iter()
        .zip(targets.par_iter())
        .map(|(iv, y)| {
            let (iv, y) = (iv.as_ref(), y.as_ref());
            if iv.len() != o || y.len() != o {
                return Err(ConformalError::Misaligned {
                    what: "interval or target length",
                    expected: o,
                    actual: if iv.len() != o { iv.len() } else { y.len() },
                });
            }
            let covered = iv.iter().zip(y).filter(|([lo, hi], v)| lo <= v && *v <= hi).count();
            let width: f64 = iv.iter().map(|[lo, hi]| hi - lo).sum();
            Ok((covered, covered == o, width))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = per_example.len();
    let (mut covered, mut joint, mut width) = (0usize, 0usize, 0.0);
    for (c, j, w) in per_example {
        covered += c;
        joint += j as usize;
        width += w;
    }
    Ok(CoverageReport {
        ic: covered as f64 / (n * o) as f64,
        jc: joint as f64 / n as f64,
        miw: width / (n * o) as f64,
        n_test: n,
    })
}

/// Builds intervals from a band and scores them against the targets.
pub fn evaluate_band<F, T>(band: &ConformalBand, forecasts: &[F], targets: &[T]) -> Result<CoverageReport, ConformalError>
where
    F: AsRef<[f64]>,
    T: AsRef<[f64]> + Sync,
{
    let intervals = forecasts
        .iter()
        .map(|f| predict_interval(f.as_ref(), band))
        .collect::<Result<Vec<_>, _>>()?;
    coverage_metrics(&intervals, targets)
}

fn check_weight(name: &'static str, value: f64) -> Result<(), ConformalError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ConformalError::BadWeight { name, value })
    }
}

/// `(β·JC + (1 - β)·IC) / 2`, so at most 0.5.
pub fn wac(jc: f64, ic: f64, beta: f64) -> Result<f64, ConformalError> {
    check_weight("beta", beta)?;
    check_weight("jc", jc)?;
    check_weight("ic", ic)?;
    Ok((beta * jc + (1.0 - beta) * ic) / 2.0)
}

/// Trade-off score `λ·WAC + (1 - λ)·s(z)` for each report, with `z` the
/// z-score of its width against the sample mean and standard deviation of
/// all widths.
pub fn tos_scores(
    reports: &[CoverageReport],
    beta: f64,
    lambda: f64,
    sign: WidthSign,
) -> Result<Vec<f64>, ConformalError> {
    let k = reports.len();
    if k < 2 {
        return Err(ConformalError::TooFewReports(k));
    }
    check_weight("lambda", lambda)?;
    check_weight("beta", beta)?;
    if reports.iter().any(|r| !r.miw.is_finite() || r.miw < 0.0) {
        return Err(ConformalError::NonFinite("interval widths"));
    }
    let mean = reports.iter().map(|r| r.miw).sum::<f64>() / k as f64;
    let sd = (reports.iter().map(|r| (r.miw - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt();
    reports
        .iter()
        .map(|r| {
            let z = if sd > 0.0 { (mean - r.miw) / sd } else { 0.0 };
            let width_term = match sign {
                WidthSign::Intent => 1.0 / (1.0 + (-z).exp()),
                WidthSign::Verbatim => 1.0 / (1.0 + z.exp()),
            };
            Ok(lambda * wac(r.jc, r.ic, beta)? + (1.0 - lambda) * width_term)
        })
        .collect()
}
