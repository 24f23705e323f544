use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricsReport;

pub const REPORT_SCHEMA: &str = "nsatp-report/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub model: String,
    pub label: String,
    pub config_hash: String,
    pub provenance: String,
    pub seed: u64,
    pub n_p: usize,
    pub n_f: usize,
    /// Mean training loss of the initial parameters, before any update.
    pub initial_train_loss: Option<f64>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub test: MetricsReport,
    pub adf_ratio: Option<f64>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Same report with the timing field cleared, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

pub fn provenance(config_hash: &str, seed: u64) -> String {
    format!(
        "nsatp-{} cfg:{config_hash} seed:{seed}",
        env!("CARGO_PKG_VERSION")
    )
}

/// Aligned text table: one row per report, RMSE/MAE/MAPE per horizon.
pub fn text_table(reports: &[RunReport]) -> String {
    let mut horizons: Vec<usize> = reports.iter().map(|r| r.n_f).collect();
    horizons.sort_unstable();
    horizons.dedup();
    let label_w = reports
        .iter()
        .map(|r| r.label.len())
        .chain(std::iter::once(5))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "Model");
    for h in &horizons {
        let head = format!("{}→{}", reports[0].n_p, h);
        let _ = write!(out, " | {head:^26}");
    }
    out.push('\n');
    let _ = write!(out, "{:<label_w$}", "");
    for _ in &horizons {
        let _ = write!(out, " | {:>8} {:>8} {:>8}", "RMSE", "MAE", "MAPE");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<label_w$}", r.label);
        for &h in &horizons {
            if r.n_f == h {
                let _ = write!(
                    out,
                    " | {:>8.3} {:>8.3} {:>8.4}",
                    r.test.rmse_s, r.test.mae_s, r.test.mape_pct
                );
            } else {
                let _ = write!(out, " | {:>8} {:>8} {:>8}", "-", "-", "-");
            }
        }
        if let Some(a) = r.adf_ratio {
            let _ = write!(out, " | adf_ratio {a:.3}");
        }
        out.push('\n');
    }
    out
}
