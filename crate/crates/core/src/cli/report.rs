//! JSON report types. Reports carry no wall-clock data, so identical runs
//! produce byte-identical output.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::conformal::WidthSign;
use crate::model::ModelKind;

pub const REPORT_SCHEMA: &str = "emf-report/1";
pub const TOS_SCHEMA: &str = "emf-tos/1";
pub const SWEEP_SCHEMA: &str = "emf-sweep/1";

/// JSON Schema for [`EvalReport`], shipped with the crate.
pub const REPORT_JSON_SCHEMA: &str = include_str!("../../schema/emf-report-1.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub mean: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl MseSummary {
    pub fn from_values(per_seed: Vec<f64>) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let std = if per_seed.len() > 1 {
            (per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, per_seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub test_mse: f64,
    pub ic: f64,
    pub jc: f64,
    pub miw: f64,
    /// Training details; absent when the model came from a checkpoint.
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub stopped_early: Option<bool>,
    pub best_val_mse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub train_mean: f64,
    pub train_std: f64,
}

/// Result of `emf train`, `emf eval` and `emf conformal`.
///
/// Errors, widths and radii are in z-scored units of the training segment.
/// The conformal fields (`epsilons` through `wac`) describe the first
/// seed's model, which is the one written as the checkpoint; per-seed
/// values are listed under `runs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub command: String,
    pub version: String,
    pub dataset: String,
    pub model_kind: ModelKind,
    pub lookback: usize,
    pub horizon: usize,
    pub param_count: usize,
    pub seeds: Vec<u64>,
    pub test_mse: MseSummary,
    pub persistence_mse: f64,
    pub n_test: usize,
    pub alpha: f64,
    pub calibration_set: String,
    pub calibration_size: usize,
    pub epsilons: Vec<f64>,
    pub ic: f64,
    pub jc: f64,
    pub miw: f64,
    pub wac: f64,
    /// Filled in only by a comparison run.
    pub tos: Option<f64>,
    pub normalization: Normalization,
    pub runs: Vec<SeedRun>,
    pub config: RunConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TosEntry {
    pub rank: usize,
    pub report: String,
    pub model_kind: ModelKind,
    pub test_mse: f64,
    pub ic: f64,
    pub jc: f64,
    pub miw: f64,
    pub wac: f64,
    pub tos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TosTable {
    pub schema: String,
    pub dataset: String,
    pub lookback: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub width_sign: WidthSign,
    /// Highest score first.
    pub entries: Vec<TosEntry>,
}

impl TosTable {
    pub fn to_text(&self) -> String {
        let header = ["rank", "model", "test_mse", "ic", "jc", "miw", "wac", "tos", "report"];
        let rows: Vec<[String; 9]> = self
            .entries
            .iter()
            .map(|e| {
                [
                    e.rank.to_string(),
                    e.model_kind.to_string(),
                    format!("{:.6}", e.test_mse),
                    format!("{:.4}", e.ic),
                    format!("{:.4}", e.jc),
                    format!("{:.6}", e.miw),
                    format!("{:.4}", e.wac),
                    format!("{:.4}", e.tos),
                    e.report.clone(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: Vec<&str>| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 8 { c.to_string() } else { format!("{c:>w$}") })
                .collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = format!(
            "dataset {}  L={} O={}  alpha={} beta={} lambda={}\n",
            self.dataset, self.lookback, self.horizon, self.alpha, self.beta, self.lambda
        );
        out += &line(header.to_vec());
        for r in &rows {
            out += &line(r.iter().map(String::as_str).collect());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_summary() {
        let s = MseSummary::from_values(vec![1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(MseSummary::from_values(vec![4.0]).std, 0.0);
    }

    #[test]
    fn text_table_aligns_columns() {
        let entry = |rank, miw| TosEntry {
            rank,
            report: format!("r{rank}.json"),
            model_kind: ModelKind::Dlinear,
            test_mse: 0.1,
            ic: 0.9,
            jc: 0.8,
            miw,
            wac: 0.4,
            tos: 0.5,
        };
        let t = TosTable {
            schema: TOS_SCHEMA.into(),
            dataset: "d".into(),
            lookback: 8,
            horizon: 2,
            alpha: 0.1,
            beta: 0.5,
            lambda: 0.5,
            width_sign: WidthSign::Intent,
            entries: vec![entry(1, 1.0), entry(2, 123.0)],
        };
        let text = t.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        let col = |l: &str| l.find("0.4000").unwrap();
        assert_eq!(col(lines[2]), col(lines[3]));
    }
}
