//! Data characterization: unit-root testing, DFT periodicity and cross-site
//! correlation.

mod adf;
mod correlation;
mod spectrum;

pub use adf::{adf_statistic, adf_test, schwert_max_lag, AdfResult, Rejections, CRITICAL_VALUES};
pub use correlation::correlation_matrix;
pub use spectrum::{dominant_period, fft_magnitudes, Spectrum};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("{what}: need at least {required} samples, have {actual}")]
    TooShort {
        what: &'static str,
        required: usize,
        actual: usize,
    },
    #[error("regression design matrix is rank deficient")]
    RankDeficient,
    #[error("spectrum has no dominant period (all non-DC magnitudes are zero)")]
    NoDominantPeriod,
    #[error("invalid input: {0}")]
    Invalid(String),
}
