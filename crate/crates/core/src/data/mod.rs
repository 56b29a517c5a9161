//! Measurement ingestion and dataset construction.
//!
//! The preprocessing order is fixed: outlier interpolation on the raw
//! series, a temporal 70/10/20 split, z-scoring with train-only statistics,
//! then stride-1 windowing applied separately to each segment so no window
//! crosses a split boundary.

mod load;

pub use load::{load_series, write_series, LoadOptions};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error("row {row}: cannot parse {column} value {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: timestamp {value:?} is not RFC-3339")]
    Timestamp { row: usize, value: String },
    #[error("row {row}: timestamps are not strictly increasing")]
    NonMonotone { row: usize },
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("series is empty")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("sample interval must be positive, got {0}")]
    BadInterval(f64),
    #[error("{what}: need at least {required} samples, have {actual}")]
    TooShort {
        what: &'static str,
        required: usize,
        actual: usize,
    },
    #[error("degenerate series: training segment has zero standard deviation")]
    Degenerate,
    #[error("invalid split ratios {0:?}: each must be positive and they must sum to 1")]
    BadRatios([f64; 3]),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// A univariate measurement record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    /// Seconds between consecutive samples.
    sample_interval: f64,
    label: String,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, sample_interval: f64, label: impl Into<String>) -> Result<Self, DataError> {
        if values.is_empty() {
            return Err(DataError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite(i));
        }
        if !(sample_interval > 0.0 && sample_interval.is_finite()) {
            return Err(DataError::BadInterval(sample_interval));
        }
        Ok(Self {
            values,
            sample_interval,
            label: label.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn with_values(&self, values: Vec<f64>) -> Result<Self, DataError> {
        Self::new(values, self.sample_interval, self.label.clone())
    }
}

/// Contiguous train/validation/test segments, z-scored with train statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSeries {
    pub train: TimeSeries,
    pub val: TimeSeries,
    pub test: TimeSeries,
    pub train_mean: f64,
    pub train_std: f64,
}

/// Aligned lookback/horizon pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub lookback: usize,
    pub horizon: usize,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Keeps the pairs at the given positions, in that order.
    pub fn select(&self, idx: &[usize]) -> WindowDataset {
        WindowDataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
            lookback: self.lookback,
            horizon: self.horizon,
        }
    }
}

/// Replaces interior samples strictly above `delta` with the mean of their
/// original neighbours. Endpoints copy their single neighbour.
pub fn interpolate_outliers(s: &TimeSeries, delta: f64) -> Result<TimeSeries, DataError> {
    if !(delta > 0.0) {
        return Err(DataError::Invalid(format!("outlier threshold must be > 0, got {delta}")));
    }
    let x = s.values();
    let n = x.len();
    let out = (0..n)
        .map(|t| {
            if x[t] <= delta || n == 1 {
                x[t]
            } else if t == 0 {
                x[1]
            } else if t == n - 1 {
                x[n - 2]
            } else {
                (x[t - 1] + x[t + 1]) / 2.0
            }
        })
        .collect();
    s.with_values(out)
}

/// Sample mean and `n-1` standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.7, 0.1, 0.2];

pub fn validate_ratios(ratios: [f64; 3]) -> Result<(), DataError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(ratios));
    }
    Ok(())
}

/// Split boundaries `(floor(r0 T), floor((r0 + r1) T))`.
pub fn split_points(len: usize, ratios: [f64; 3]) -> (usize, usize) {
    // the nudge keeps e.g. 0.7 * 10 from flooring to 6
    let b = |r: f64| ((r * len as f64) + 1e-9).floor() as usize;
    (b(ratios[0]), b(ratios[0] + ratios[1]).min(len))
}

pub fn split_and_normalize(s: &TimeSeries, ratios: [f64; 3]) -> Result<SplitSeries, DataError> {
    validate_ratios(ratios)?;
    let t = s.len();
    if t < 10 {
        return Err(DataError::TooShort {
            what: "split",
            required: 10,
            actual: t,
        });
    }
    let (a, b) = split_points(t, ratios);
    let x = s.values();
    if a == 0 || b == a || b == t {
        return Err(DataError::TooShort {
            what: "split with non-empty segments",
            required: t + 1,
            actual: t,
        });
    }
    let (mu, sigma) = mean_std(&x[..a]);
    if !(sigma > 0.0) {
        return Err(DataError::Degenerate);
    }
    let z = |seg: &[f64]| s.with_values(seg.iter().map(|v| (v - mu) / sigma).collect());
    Ok(SplitSeries {
        train: z(&x[..a])?,
        val: z(&x[a..b])?,
        test: z(&x[b..])?,
        train_mean: mu,
        train_std: sigma,
    })
}

/// Stride-1 windows: pair `i` is `(segment[i..i+L], segment[i+L..i+L+O])`.
pub fn make_windows(segment: &[f64], lookback: usize, horizon: usize) -> Result<WindowDataset, DataError> {
    if lookback == 0 || horizon == 0 {
        return Err(DataError::Invalid("lookback and horizon must be positive".into()));
    }
    let need = lookback + horizon;
    if segment.len() < need {
        return Err(DataError::TooShort {
            what: "windowing",
            required: need,
            actual: segment.len(),
        });
    }
    let n = segment.len() - need + 1;
    let (inputs, targets) = (0..n)
        .into_par_iter()
        .map(|i| {
            (
                segment[i..i + lookback].to_vec(),
                segment[i + lookback..i + need].to_vec(),
            )
        })
        .unzip();
    Ok(WindowDataset {
        inputs,
        targets,
        lookback,
        horizon,
    })
}

/// Block means over `k` consecutive samples; a trailing partial block is dropped.
pub fn downsample(s: &TimeSeries, k: usize) -> Result<TimeSeries, DataError> {
    if k == 0 {
        return Err(DataError::Invalid("downsampling factor must be >= 1".into()));
    }
    if k > s.len() {
        return Err(DataError::TooShort {
            what: "downsampling",
            required: k,
            actual: s.len(),
        });
    }
    let values = s
        .values()
        .chunks_exact(k)
        .map(|c| c.iter().sum::<f64>() / k as f64)
        .collect();
    TimeSeries::new(values, s.sample_interval * k as f64, s.label.clone())
}

/// First-order differences `y_t = x_{t+1} - x_t`.
pub fn difference(s: &TimeSeries) -> Result<TimeSeries, DataError> {
    if s.len() < 2 {
        return Err(DataError::TooShort {
            what: "differencing",
            required: 2,
            actual: s.len(),
        });
    }
    s.with_values(s.values().windows(2).map(|w| w[1] - w[0]).collect())
}

/// Inverse of [`difference`] given the first level.
pub fn integrate(first: f64, diffs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(diffs.len() + 1);
    out.push(first);
    let mut acc = first;
    for d in diffs {
        acc += d;
        out.push(acc);
    }
    out
}

/// The three windowed segments of a split series.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub split: SplitSeries,
    pub train: WindowDataset,
    pub val: WindowDataset,
    pub test: WindowDataset,
}

/// Interpolation (when a threshold is given), split, z-score and windowing.
pub fn prepare(
    s: &TimeSeries,
    delta: Option<f64>,
    ratios: [f64; 3],
    lookback: usize,
    horizon: usize,
) -> Result<PreparedData, DataError> {
    let cleaned = match delta {
        Some(d) => interpolate_outliers(s, d)?,
        None => s.clone(),
    };
    let split = split_and_normalize(&cleaned, ratios)?;
    let train = make_windows(split.train.values(), lookback, horizon)?;
    let val = make_windows(split.val.values(), lookback, horizon)?;
    let test = make_windows(split.test.values(), lookback, horizon)?;
    Ok(PreparedData {
        split,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ts(v: &[f64]) -> TimeSeries {
        TimeSeries::new(v.to_vec(), 360.0, "test").unwrap()
    }

    /// Scalar loop written independently of the iterator version.
    fn reference_interpolate(x: &[f64], delta: f64) -> Vec<f64> {
        let mut out = x.to_vec();
        let last = x.len() - 1;
        for t in 0..x.len() {
            if x[t] > delta && x.len() > 1 {
                out[t] = if t == 0 {
                    x[1]
                } else if t == last {
                    x[last - 1]
                } else {
                    0.5 * x[t - 1] + 0.5 * x[t + 1]
                };
            }
        }
        out
    }

    #[test]
    fn time_series_invariants() {
        assert!(matches!(TimeSeries::new(vec![], 1.0, ""), Err(DataError::Empty)));
        assert!(matches!(TimeSeries::new(vec![1.0, f64::NAN], 1.0, ""), Err(DataError::NonFinite(1))));
        assert!(matches!(TimeSeries::new(vec![1.0], 0.0, ""), Err(DataError::BadInterval(_))));
    }

    #[test]
    fn outlier_examples() {
        let out = interpolate_outliers(&ts(&[1.0, 100.0, 1.0]), 50.0).unwrap();
        assert_eq!(out.values(), &[1.0, 1.0, 1.0]);
        let out = interpolate_outliers(&ts(&[1.0, 2.0, 3.0]), 50.0).unwrap();
        assert_eq!(out.values(), &[1.0, 2.0, 3.0]);
        let out = interpolate_outliers(&ts(&[100.0, 1.0, 1.0]), 50.0).unwrap();
        assert_eq!(out.values(), reference_interpolate(&[100.0, 1.0, 1.0], 50.0).as_slice());
        assert_eq!(out.values(), &[1.0, 1.0, 1.0]);
        assert!(interpolate_outliers(&ts(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn outliers_use_original_neighbours() {
        // both spikes see the raw neighbours, not each other's replacement
        let out = interpolate_outliers(&ts(&[2.0, 90.0, 80.0, 4.0]), 50.0).unwrap();
        assert_eq!(out.values(), &[2.0, 41.0, 47.0, 4.0]);
    }

    #[test]
    fn split_examples() {
        let s = ts(&(0..10).map(f64::from).collect::<Vec<_>>());
        let sp = split_and_normalize(&s, DEFAULT_SPLIT).unwrap();
        assert_eq!((sp.train.len(), sp.val.len(), sp.test.len()), (7, 1, 2));
        assert_eq!(sp.train_mean, 3.0);

        let s = ts(&[1.0, 2.0, 3.0, 10.0, 20.0]);
        let sp = split_and_normalize(&ts(&[s.values(), s.values()].concat()), [0.3, 0.3, 0.4]).unwrap();
        assert_eq!(sp.train.values(), &[-1.0, 0.0, 1.0]);
        assert_eq!((sp.train_mean, sp.train_std), (2.0, 1.0));

        assert!(matches!(split_and_normalize(&ts(&[4.0; 20]), DEFAULT_SPLIT), Err(DataError::Degenerate)));
        assert!(matches!(split_and_normalize(&ts(&[1.0; 9]), DEFAULT_SPLIT), Err(DataError::TooShort { .. })));
        assert!(matches!(split_and_normalize(&s, [0.5, 0.5, 0.5]), Err(DataError::BadRatios(_))));
    }

    #[test]
    fn window_examples() {
        let seg: Vec<f64> = (1..=10).map(f64::from).collect();
        let w = make_windows(&seg, 3, 2).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(w.inputs[0], vec![1.0, 2.0, 3.0]);
        assert_eq!(w.targets[0], vec![4.0, 5.0]);
        // brute-force enumeration of start indices
        let mut expect = Vec::new();
        for start in 0..seg.len() {
            if start + 5 <= seg.len() {
                expect.push(seg[start..start + 5].to_vec());
            }
        }
        let got: Vec<Vec<f64>> = w
            .inputs
            .iter()
            .zip(&w.targets)
            .map(|(a, b)| [a.as_slice(), b.as_slice()].concat())
            .collect();
        assert_eq!(got, expect);

        assert_eq!(make_windows(&seg[..5], 3, 2).unwrap().len(), 1);
        match make_windows(&seg[..4], 3, 2) {
            Err(DataError::TooShort { required: 5, actual: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn downsample_examples() {
        let out = downsample(&ts(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 5).unwrap();
        assert_eq!(out.values(), &[3.0]);
        assert_eq!(out.sample_interval(), 1800.0);
        let s = ts(&[1.5, -2.0, 7.0]);
        assert_eq!(downsample(&s, 1).unwrap(), s);
        assert_eq!(downsample(&ts(&[2.0, 4.0]), 2).unwrap().values(), &[3.0]);
        assert!(downsample(&ts(&[2.0, 4.0]), 3).is_err());
    }

    #[test]
    fn difference_examples() {
        assert_eq!(difference(&ts(&[1.0, 3.0, 6.0])).unwrap().values(), &[2.0, 3.0]);
        assert_eq!(difference(&ts(&[5.0; 4])).unwrap().values(), &[0.0; 3]);
        assert!(difference(&ts(&[5.0])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let steps: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let walk = integrate(0.0, &steps);
        let d = difference(&ts(&walk)).unwrap();
        for (a, b) in d.values().iter().zip(&steps) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn difference_round_trip(v in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let d = difference(&ts(&v)).unwrap();
            let back = integrate(v[0], d.values());
            // rounding accumulates along the running sum
            let tol = 1e-14 * v.len() as f64 * v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for (a, b) in back.iter().zip(&v) {
                prop_assert!((a - b).abs() < tol);
            }
        }

        #[test]
        fn windows_tile_the_segment(
            seg in prop::collection::vec(-5.0f64..5.0, 2..200),
            l in 1usize..20, o in 1usize..10,
        ) {
            prop_assume!(seg.len() >= l + o);
            let w = make_windows(&seg, l, o).unwrap();
            prop_assert_eq!(w.len(), seg.len() - l - o + 1);
            for i in 0..w.len() {
                let joined = [w.inputs[i].as_slice(), w.targets[i].as_slice()].concat();
                prop_assert_eq!(joined.as_slice(), &seg[i..i + l + o]);
            }
        }

        #[test]
        fn normalized_train_is_standard(v in prop::collection::vec(-100.0f64..100.0, 10..300)) {
            let s = ts(&v);
            let (a, b) = split_points(v.len(), DEFAULT_SPLIT);
            prop_assert_eq!(a + (b - a) + (v.len() - b), v.len());
            prop_assume!(mean_std(&v[..a]).1 > 1e-6);
            let sp = split_and_normalize(&s, DEFAULT_SPLIT).unwrap();
            let (m, sd) = mean_std(sp.train.values());
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((sd - 1.0).abs() < 1e-10);
            prop_assert_eq!(sp.train.len() + sp.val.len() + sp.test.len(), v.len());
            let t = v.len() as f64;
            prop_assert!((sp.train.len() as f64 - 0.7 * t).abs() <= 1.0);
            prop_assert!((sp.val.len() as f64 - 0.1 * t).abs() <= 1.0);
            prop_assert!((sp.test.len() as f64 - 0.2 * t).abs() <= 1.0);
            // segments are the source, in order
            let back: Vec<f64> = sp.train.values().iter()
                .chain(sp.val.values()).chain(sp.test.values())
                .map(|z| z * sp.train_std + sp.train_mean).collect();
            for (x, y) in back.iter().zip(&v) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn interpolation_idempotent_without_reexceedance(
            v in prop::collection::vec(0.0f64..10.0, 3..100),
            spikes in prop::collection::vec(any::<prop::sample::Index>(), 0..5),
        ) {
            let mut v = v;
            let n = v.len();
            for s in &spikes {
                v[s.index(n)] = 100.0;
            }
            let once = interpolate_outliers(&ts(&v), 50.0).unwrap();
            let expected = reference_interpolate(&v, 50.0);
            prop_assert_eq!(once.values(), expected.as_slice());
            prop_assume!(once.values().iter().all(|x| *x <= 50.0));
            let twice = interpolate_outliers(&once, 50.0).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
