//! Seeded synthetic series for tests, demos and `emf selftest --fixtures`.
//!
//! The daily-cycle fixture is `x_t = sin(2πt/240) + 0.1·ε_t` with
//! `ε_t ~ N(0, 1)`: 240 samples per cycle, which at a 6-minute sample
//! interval is one day. The two-cycle fixture adds a half-day harmonic.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{DataError, TimeSeries};

pub const DAILY_PERIOD: f64 = 240.0;
pub const HALF_DAY_PERIOD: f64 = 120.0;
pub const NOISE_SD: f64 = 0.1;
/// Six minutes, so one 240-sample cycle spans a day.
pub const SAMPLE_INTERVAL_SECONDS: f64 = 360.0;
pub const DEFAULT_LEN: usize = 20_000;
pub const DEFAULT_SEED: u64 = 2024;

pub fn gaussian_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn build(len: usize, seed: u64, label: &str, signal: impl Fn(f64) -> f64) -> Result<TimeSeries, DataError> {
    let values = gaussian_noise(len, seed)
        .into_iter()
        .enumerate()
        .map(|(t, e)| signal(t as f64) + NOISE_SD * e)
        .collect();
    TimeSeries::new(values, SAMPLE_INTERVAL_SECONDS, label)
}

pub fn daily_cycle(len: usize, seed: u64) -> Result<TimeSeries, DataError> {
    build(len, seed, "daily-cycle", |t| (2.0 * PI * t / DAILY_PERIOD).sin())
}

/// Daily cycle plus a weaker half-day harmonic of amplitude 0.6.
pub fn two_cycle(len: usize, seed: u64) -> Result<TimeSeries, DataError> {
    build(len, seed, "two-cycle", |t| {
        (2.0 * PI * t / DAILY_PERIOD).sin() + 0.6 * (2.0 * PI * t / HALF_DAY_PERIOD).sin()
    })
}
