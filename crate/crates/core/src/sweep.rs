//! Robustness sweeps: one full train + evaluate per value of a single
//! config axis, all other settings (seeds included) held fixed.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, RunOutcome};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NoiseStrength,
    DataCondition,
    Q,
    R,
    SpreaderNorm,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NoiseStrength => "noise_strength",
            SweepAxis::DataCondition => "data_condition",
            SweepAxis::Q => "q",
            SweepAxis::R => "r",
            SweepAxis::SpreaderNorm => "spreader_norm",
        }
    }

    /// Values used when none are given.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepAxis::NoiseStrength => &["0.0", "0.01", "0.05", "0.1", "0.2"],
            SweepAxis::DataCondition => &["2x1000", "4x500", "10x200", "20x100", "40x50", "100x20"],
            SweepAxis::Q | SweepAxis::R => &["0.5", "1", "2", "5"],
            SweepAxis::SpreaderNorm => &["l1", "l2", "linf"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "noise_strength" | "noise" => Ok(SweepAxis::NoiseStrength),
            "data_condition" => Ok(SweepAxis::DataCondition),
            "q" => Ok(SweepAxis::Q),
            "r" => Ok(SweepAxis::R),
            "spreader_norm" | "spreader" => Ok(SweepAxis::SpreaderNorm),
            _ => Err(Error::Argument(format!("unknown sweep axis `{s}`"))),
        }
    }
}

/// One cell of a sweep table. `error` is set instead of the metrics when the
/// cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub config_hash: String,
    pub rho: Option<f64>,
    pub rho_test: Option<f64>,
    pub sigma_bar: Option<f64>,
    pub sigma_bar_test: Option<f64>,
    pub epochs_run: Option<usize>,
    pub runtime_seconds: f64,
    pub error: Option<String>,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "value,config_hash,rho,rho_test,sigma_bar,sigma_bar_test,epochs_run,runtime_seconds,error";

    fn from_outcome(value: &str, hash: String, out: &RunOutcome, secs: f64) -> Self {
        Self {
            value: value.to_string(),
            config_hash: hash,
            rho: out.train_eval.rho,
            rho_test: out.test_eval.as_ref().and_then(|e| e.rho),
            sigma_bar: Some(out.train_eval.sigma_bar),
            sigma_bar_test: out.test_eval.as_ref().map(|e| e.sigma_bar),
            epochs_run: Some(out.report.epochs_run),
            runtime_seconds: secs,
            error: None,
        }
    }

    pub fn csv_row(&self) -> String {
        fn o<T: std::fmt::Debug>(v: Option<T>) -> String {
            v.map(|x| format!("{x:?}")).unwrap_or_default()
        }
        let err = self.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        format!(
            "{},{},{},{},{},{},{},{:.3},{}",
            self.value,
            self.config_hash,
            o(self.rho),
            o(self.rho_test),
            o(self.sigma_bar),
            o(self.sigma_bar_test),
            o(self.epochs_run),
            self.runtime_seconds,
            err
        )
    }
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SweepRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Config for one cell: `base` with the axis set to `value`.
pub fn cell_config(base: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.set(axis.name(), value)?;
    Ok(cfg)
}

/// Run every cell (concurrently when the `parallel` feature is on). Failed
/// cells are reported in their row and do not stop the others. With
/// `out_dir`, each cell writes its artifacts into `<out_dir>/<config hash>`.
pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    out_dir: Option<&Path>,
) -> Vec<(SweepRow, Option<RunOutcome>)> {
    par::map_slice(values, |value| {
        let start = Instant::now();
        let result = cell_config(base, axis, value).and_then(|cfg| {
            let hash = cfg.hash();
            let out = match out_dir {
                Some(dir) => cfg.run_to_dir(dir.join(&hash)),
                None => cfg.run(),
            }?;
            Ok((hash, out))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok((hash, out)) => (SweepRow::from_outcome(value, hash, &out, secs), Some(out)),
            Err(e) => (
                SweepRow {
                    value: value.clone(),
                    config_hash: cell_config(base, axis, value).map(|c| c.hash()).unwrap_or_default(),
                    rho: None,
                    rho_test: None,
                    sigma_bar: None,
                    sigma_bar_test: None,
                    epochs_run: None,
                    runtime_seconds: secs,
                    error: Some(e.to_string()),
                },
                None,
            ),
        }
    })
}
