use rustfft::{num_complex::Complex, FftPlanner};

use super::AnalysisError;

/// DFT magnitudes `|X_k|` for the non-negative frequencies `k = 0..=T/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    magnitudes: Vec<f64>,
    len: usize,
}

impl Spectrum {
    /// Wraps precomputed magnitudes of a length-`len` series.
    pub fn from_magnitudes(magnitudes: Vec<f64>, len: usize) -> Result<Self, AnalysisError> {
        if magnitudes.len() != len / 2 + 1 || magnitudes.iter().any(|m| !(*m >= 0.0)) {
            return Err(AnalysisError::Invalid(format!(
                "a length-{len} series has {} non-negative magnitudes",
                len / 2 + 1
            )));
        }
        Ok(Self { magnitudes, len })
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn series_len(&self) -> usize {
        self.len
    }

    /// Samples per cycle, `T/k`; infinite at `k = 0`.
    pub fn period(&self, k: usize) -> f64 {
        self.len as f64 / k as f64
    }

    pub fn periods(&self) -> Vec<f64> {
        (0..self.magnitudes.len()).map(|k| self.period(k)).collect()
    }

    /// The `n` largest non-DC bins as `(k, period, magnitude)`, largest first;
    /// equal magnitudes keep the lower frequency first.
    pub fn top_bins(&self, n: usize) -> Vec<(usize, f64, f64)> {
        let mut idx: Vec<usize> = (1..self.magnitudes.len()).collect();
        idx.sort_by(|&a, &b| self.magnitudes[b].total_cmp(&self.magnitudes[a]).then(a.cmp(&b)));
        idx.into_iter()
            .take(n)
            .map(|k| (k, self.period(k), self.magnitudes[k]))
            .collect()
    }
}

/// `|Σ_t x_t e^{-2πikt/T}|` by FFT (mixed radix / Bluestein for any `T`).
pub fn fft_magnitudes(x: &[f64]) -> Result<Spectrum, AnalysisError> {
    let t = x.len();
    if t < 4 {
        return Err(AnalysisError::TooShort {
            what: "spectrum",
            required: 4,
            actual: t,
        });
    }
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(t).process(&mut buf);
    Ok(Spectrum {
        magnitudes: buf[..=t / 2].iter().map(|c| c.norm()).collect(),
        len: t,
    })
}

/// `T / k*` with `k* = argmax_{k≥1} |X_k|`; ties go to the smaller `k`.
pub fn dominant_period(spec: &Spectrum) -> Result<f64, AnalysisError> {
    let mags = spec.magnitudes();
    let mut best: Option<(usize, f64)> = None;
    for (k, &m) in mags.iter().enumerate().skip(1) {
        // relative slack so rounding noise cannot break a tie toward higher k
        if best.is_none_or(|(_, b)| m > b * (1.0 + 1e-12)) {
            best = Some((k, m));
        }
    }
    match best {
        Some((k, peak)) if peak > 1e-10 * (mags[0] + peak) => Ok(spec.period(k)),
        _ => Err(AnalysisError::NoDominantPeriod),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Direct O(T²) evaluation of the DFT.
    fn direct_dft(x: &[f64]) -> Vec<f64> {
        let t = x.len();
        (0..=t / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n % t) as f64 / t as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    fn sine(t: usize, period: f64, amp: f64) -> Vec<f64> {
        (0..t).map(|i| amp * (2.0 * PI * i as f64 / period).sin()).collect()
    }

    #[test]
    fn matches_direct_evaluation() {
        for t in [240, 97, 1000, 4] {
            let x: Vec<f64> = (0..t)
                .map(|i| (i as f64 * 0.37).sin() + 0.2 * (i as f64).sqrt() - 1.0)
                .collect();
            let fast = fft_magnitudes(&x).unwrap();
            let slow = direct_dft(&x);
            let scale = slow.iter().fold(0.0f64, |m, v| m.max(*v));
            for (a, b) in fast.magnitudes().iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-9 * scale.max(1.0), "T={t}: {a} vs {b}");
            }
            assert_eq!(fast.magnitudes().len(), t / 2 + 1);
        }
    }

    #[test]
    fn daily_sine_peak() {
        let x = sine(240, 24.0, 1.0);
        let slow = direct_dft(&x);
        let k_star = (1..slow.len()).max_by(|&a, &b| slow[a].total_cmp(&slow[b])).unwrap();
        assert_eq!(k_star, 10);
        let spec = fft_magnitudes(&x).unwrap();
        assert_eq!(dominant_period(&spec).unwrap(), 24.0);
        assert_eq!(spec.periods()[10], 24.0);
    }

    #[test]
    fn constant_series_is_dc_only() {
        let spec = fft_magnitudes(&[3.0; 64]).unwrap();
        assert!((spec.magnitudes()[0] - 192.0).abs() < 1e-9);
        assert!(spec.magnitudes()[1..].iter().all(|m| *m < 1e-9));
        assert!(matches!(dominant_period(&spec), Err(AnalysisError::NoDominantPeriod)));
    }

    #[test]
    fn two_sinusoids_have_two_local_maxima() {
        let t = 480;
        let x: Vec<f64> = sine(t, 24.0, 1.0).iter().zip(sine(t, 12.0, 0.7)).map(|(a, b)| a + b).collect();
        let slow = direct_dft(&x);
        let spec = fft_magnitudes(&x).unwrap();
        let m = spec.magnitudes();
        for k in [t / 24, t / 12] {
            assert!(m[k] > m[k - 1] && m[k] > m[k + 1]);
            assert!(slow[k] > slow[k - 1] && slow[k] > slow[k + 1]);
        }
        let top: Vec<usize> = spec.top_bins(2).iter().map(|b| b.0).collect();
        assert_eq!(top, vec![20, 40]);
    }

    #[test]
    fn dominant_period_edge_cases() {
        let zero = Spectrum::from_magnitudes(vec![0.0; 11], 20).unwrap();
        assert!(matches!(dominant_period(&zero), Err(AnalysisError::NoDominantPeriod)));

        let mut mags = vec![0.1; 21];
        mags[5] = 3.0;
        mags[10] = 3.0;
        let tie = Spectrum::from_magnitudes(mags, 40).unwrap();
        assert_eq!(dominant_period(&tie).unwrap(), 8.0);
        assert!(Spectrum::from_magnitudes(vec![1.0; 3], 20).is_err());
        assert!(fft_magnitudes(&[1.0; 3]).is_err());
    }

    #[test]
    fn parseval() {
        let t = 300;
        let x: Vec<f64> = (0..t).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(t).process(&mut buf);
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral: f64 = buf.iter().map(|c| c.norm_sqr()).sum::<f64>() / t as f64;
        assert!((energy - spectral).abs() <= 1e-9 * energy);
        // the half spectrum carries the same energy via conjugate symmetry
        let spec = fft_magnitudes(&x).unwrap();
        let m = spec.magnitudes();
        let half: f64 = m[0].powi(2) + m[t / 2].powi(2) + 2.0 * m[1..t / 2].iter().map(|v| v * v).sum::<f64>();
        assert!((energy - half / t as f64).abs() <= 1e-9 * energy);
    }
}
