//! Built-in consistency checks run by `emf selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conformal::{critical_epsilon, ConformalError};
use crate::model::{revin_denormalize, revin_normalize, EmfConfig, EmfModel};
use crate::nn::gradient_check;

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

/// Analytic vs central-difference gradients of a small model, five seeds.
pub fn gradient_check_emf() -> CheckOutcome {
    let cfg = EmfConfig {
        lookback: 32,
        horizon: 8,
        patch_len: 8,
        stride: 8,
        embed_dim: 8,
        hidden_dim: 16,
        blocks: 2,
        activation: Default::default(),
    };
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let model = match EmfModel::new(cfg, seed) {
            Ok(m) => m,
            Err(e) => return outcome("gradient check", false, e.to_string()),
        };
        let x: Vec<f64> = (0..32).map(|t| (t as f64 / 4.0).sin() + rng.random_range(-0.5..0.5)).collect();
        let y: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        match gradient_check(&model, &x, &y, 1e-5) {
            Ok(err) => worst = worst.max(err),
            Err(e) => return outcome("gradient check", false, e.to_string()),
        }
    }
    outcome("gradient check", worst < 1e-4, format!("max relative error {worst:.3e} (limit 1e-4)"))
}

/// Normalize-then-denormalize on 1000 random windows.
pub fn revin_identity() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(2..200);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let offset = rng.random_range(-100.0..100.0);
        let x: Vec<f64> = (0..len).map(|_| offset + scale * rng.random_range(-1.0..1.0)).collect();
        let gamma = rng.random_range(0.5..2.0);
        let delta = rng.random_range(-1.0..1.0);
        let (xr, stats) = revin_normalize(&x, gamma, delta);
        let back = revin_denormalize(&xr, &stats);
        for (a, b) in back.iter().zip(&x) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    outcome("revin identity", worst < 1e-10, format!("max reconstruction error {worst:.3e} (limit 1e-10)"))
}

/// Quantile rule against exhaustive search over m = 1..=50 and four levels.
pub fn quantile_oracle() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = 0;
    for m in 1..=50usize {
        for pct in [1usize, 5, 10, 20] {
            let res: Vec<f64> = (0..m).map(|_| rng.random_range(0..20) as f64).collect();
            let need = (m + 1) * (100 - pct);
            let mut sorted = res.clone();
            sorted.sort_by(f64::total_cmp);
            let expected = sorted
                .iter()
                .copied()
                .find(|v| res.iter().filter(|r| *r <= v).count() * 100 >= need);
            let got = critical_epsilon(&res, pct as f64 / 100.0);
            let agree = match (&got, expected) {
                (Ok(g), Some(e)) => *g == e && need <= m * 100,
                (Err(ConformalError::InsufficientCalibration { .. }), _) => need > m * 100,
                _ => false,
            };
            if !agree {
                return outcome("quantile oracle", false, format!("m={m} alpha={pct}%: got {got:?}, expected {expected:?}"));
            }
            cases += 1;
        }
    }
    outcome("quantile oracle", true, format!("{cases} cases agree"))
}

pub fn run_all() -> Vec<CheckOutcome> {
    vec![gradient_check_emf(), revin_identity(), quantile_oracle()]
}
