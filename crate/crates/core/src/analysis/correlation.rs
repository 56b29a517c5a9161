use super::AnalysisError;

/// Pairwise Pearson correlation over the first `common_len` samples.
///
/// A constant series has no defined correlation: its whole row and column,
/// diagonal included, come back as `None`.
pub fn correlation_matrix<S: AsRef<[f64]>>(
    series: &[S],
    common_len: usize,
) -> Result<Vec<Vec<Option<f64>>>, AnalysisError> {
    if series.len() < 2 {
        return Err(AnalysisError::Invalid("correlation needs at least two series".into()));
    }
    if common_len < 3 {
        return Err(AnalysisError::TooShort {
            what: "correlation window",
            required: 3,
            actual: common_len,
        });
    }
    let mut centered = Vec::with_capacity(series.len());
    for s in series {
        let s = s.as_ref();
        if s.len() < common_len {
            return Err(AnalysisError::TooShort {
                what: "correlation input",
                required: common_len,
                actual: s.len(),
            });
        }
        let w = &s[..common_len];
        let mean = w.iter().sum::<f64>() / common_len as f64;
        let c: Vec<f64> = w.iter().map(|v| v - mean).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        centered.push((c, norm));
    }
    let k = series.len();
    let mut out = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let (a, na) = &centered[i];
            let (b, nb) = &centered[j];
            if *na == 0.0 || *nb == 0.0 {
                continue;
            }
            let r = if i == j {
                1.0
            } else {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (dot / (na * nb)).clamp(-1.0, 1.0)
            };
            out[i][j] = Some(r);
            out[j][i] = Some(r);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn identical_and_opposite() {
        let s = noise(1, 50);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let c = correlation_matrix(&[s.clone(), s.clone(), neg], 50).unwrap();
        assert!((c[0][1].unwrap() - 1.0).abs() < 1e-12);
        assert!((c[0][2].unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(c[1][1], Some(1.0));
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        let c = correlation_matrix(&[noise(2, 10_000), noise(3, 10_000)], 10_000).unwrap();
        assert!(c[0][1].unwrap().abs() < 0.05);
    }

    #[test]
    fn constant_series_flagged() {
        let c = correlation_matrix(&[noise(4, 10), vec![2.0; 12]], 10).unwrap();
        assert_eq!(c[0][1], None);
        assert_eq!(c[1][0], None);
        assert_eq!(c[1][1], None);
        assert_eq!(c[0][0], Some(1.0));
    }

    #[test]
    fn preconditions() {
        assert!(correlation_matrix(&[noise(1, 10)], 10).is_err());
        assert!(correlation_matrix(&[noise(1, 10), noise(2, 5)], 10).is_err());
        assert!(correlation_matrix(&[noise(1, 10), noise(2, 10)], 2).is_err());
    }

    #[test]
    fn positive_semidefinite() {
        let series: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let base = noise(10, 200);
                let own = noise(20 + i, 200);
                base.iter().zip(&own).map(|(b, o)| b * (i as f64 / 6.0) + o).collect()
            })
            .collect();
        let c = correlation_matrix(&series, 150).unwrap();
        let k = c.len();
        let m = DMatrix::from_fn(k, k, |i, j| c[i][j].unwrap());
        assert_eq!(m, m.transpose());
        let min = m.symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-10, "{min}");
    }
}
