//! Run configuration: one JSON document, overridden field by field from
//! the command line. The resolved value is embedded in every report and
//! checkpoint so a run can be repeated from its own output.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::data::{validate_ratios, LoadOptions, DEFAULT_SPLIT};
use crate::model::{AnyModel, Architecture, EmfConfig, ModelKind, DEFAULT_HALF_WINDOW, DEFAULT_HIDDEN};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmfSection {
    pub patch_len: usize,
    pub stride: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub blocks: usize,
}

impl Default for EmfSection {
    fn default() -> Self {
        let d = EmfConfig::default();
        Self {
            patch_len: d.patch_len,
            stride: d.stride,
            embed_dim: d.embed_dim,
            hidden_dim: d.hidden_dim,
            blocks: d.blocks,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DLinearSection {
    /// Moving-average half width; the kernel spans `2·half_window + 1` samples.
    pub half_window: usize,
}

impl Default for DLinearSection {
    fn default() -> Self {
        Self {
            half_window: DEFAULT_HALF_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSection {
    pub hidden: Vec<usize>,
}

impl Default for MlpSection {
    fn default() -> Self {
        Self {
            hidden: vec![DEFAULT_HIDDEN],
        }
    }
}

/// Optimizer and stopping settings; the seed comes from `RunConfig::seeds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub lr: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            max_epochs: d.max_epochs,
            batch_size: d.batch_size,
            patience: d.patience,
            lr: d.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub value_column: String,
    pub interval_seconds: Option<f64>,
    pub label: Option<String>,
    /// Outlier threshold; samples strictly above it are interpolated.
    pub delta: Option<f64>,
    pub split: [f64; 3],
    pub lookback: usize,
    pub horizon: usize,
    pub model: ModelKind,
    pub emf: EmfSection,
    pub dlinear: DLinearSection,
    pub mlp: MlpSection,
    pub train: TrainSection,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            value_column: "value".into(),
            interval_seconds: None,
            label: None,
            delta: None,
            split: DEFAULT_SPLIT,
            lookback: 336,
            horizon: 96,
            model: ModelKind::Emforecaster,
            emf: EmfSection::default(),
            dlinear: DLinearSection::default(),
            mlp: MlpSection::default(),
            train: TrainSection::default(),
            seeds: vec![0],
            alpha: 0.1,
            beta: 2.0 / 3.0,
            lambda: 0.5,
            out: None,
            report: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::User(format!("config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn architecture(&self) -> Architecture {
        let (lookback, horizon) = (self.lookback, self.horizon);
        match self.model {
            ModelKind::Emforecaster => Architecture::Emforecaster(EmfConfig {
                lookback,
                horizon,
                patch_len: self.emf.patch_len,
                stride: self.emf.stride,
                embed_dim: self.emf.embed_dim,
                hidden_dim: self.emf.hidden_dim,
                blocks: self.emf.blocks,
                activation: Default::default(),
            }),
            ModelKind::Dlinear => Architecture::Dlinear {
                lookback,
                horizon,
                half_window: self.dlinear.half_window,
            },
            ModelKind::Mlp => Architecture::Mlp {
                lookback,
                horizon,
                hidden: self.mlp.hidden.clone(),
            },
            ModelKind::Persistence => Architecture::Persistence { lookback, horizon },
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: self.train.max_epochs,
            batch_size: self.train.batch_size,
            patience: self.train.patience,
            lr: self.train.lr,
            seed,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            value_column: self.value_column.clone(),
            interval_seconds: self.interval_seconds,
            label: self.label.clone(),
        }
    }

    pub fn data_path(&self) -> Result<&std::path::Path, CliError> {
        let p = self
            .data
            .as_deref()
            .ok_or_else(|| CliError::User("missing required --data (or `data` in --config)".into()))?;
        if !p.is_file() {
            return Err(CliError::User(format!("--data {}: no such file", p.display())));
        }
        Ok(p)
    }

    /// Checks every field that a run depends on before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.data_path()?;
        let user = |m: String| Err(CliError::User(m));
        validate_ratios(self.split).map_err(|e| CliError::User(format!("split: {e}")))?;
        if self.lookback == 0 || self.horizon == 0 {
            return user("lookback and horizon must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return user(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        for (name, v) in [("beta", self.beta), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return user(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return user(format!("delta must be positive, got {d}"));
            }
        }
        if let Some(s) = self.interval_seconds {
            if !(s > 0.0 && s.is_finite()) {
                return user(format!("interval_seconds must be positive, got {s}"));
            }
        }
        if self.seeds.is_empty() {
            return user("at least one seed is required".into());
        }
        self.train_config(0)
            .validate()
            .map_err(|e| CliError::User(e.to_string()))?;
        AnyModel::build(&self.architecture(), 0).map_err(|e| CliError::User(e.to_string()))?;
        Ok(())
    }
}

/// Recursively overlays `patch` onto `base` (objects merge, everything else replaces).
pub fn merge_json(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"lookbak": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"emf": {"patch": 3}}"#).is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::from_json(r#"{"emf": {"embed_dim": 8}, "model": "dlinear"}"#).unwrap();
        assert_eq!(c.emf.embed_dim, 8);
        assert_eq!(c.emf.patch_len, 16);
        assert_eq!(c.model, ModelKind::Dlinear);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("x.csv");
        std::fs::write(&data, "value\n1\n").unwrap();
        let ok = RunConfig {
            data: Some(data),
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        let bad = [
            RunConfig { data: None, ..ok.clone() },
            RunConfig { split: [0.5, 0.1, 0.2], ..ok.clone() },
            RunConfig { alpha: 1.0, ..ok.clone() },
            RunConfig { lambda: 2.0, ..ok.clone() },
            RunConfig { seeds: vec![], ..ok.clone() },
            RunConfig { emf: EmfSection { patch_len: 400, ..Default::default() }, ..ok.clone() },
        ];
        for b in bad {
            assert!(matches!(b.validate(), Err(CliError::User(_))), "{b:?}");
        }
    }

    #[test]
    fn merge_overlays_nested_fields() {
        let mut base = serde_json::json!({"a": 1, "emf": {"p": 1, "d": 2}});
        merge_json(&mut base, &serde_json::json!({"emf": {"d": 5}, "b": [1]}));
        assert_eq!(base, serde_json::json!({"a": 1, "emf": {"p": 1, "d": 5}, "b": [1]}));
    }
}
