//! RMSE, MAE and MAPE of predicted arrival times.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub rmse_s: f64,
    pub mae_s: f64,
    pub mape_pct: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_s: f64,
    pub mae_s: f64,
    pub mape_pct: f64,
    /// Count of (sample, step) pairs behind the totals.
    pub n: usize,
    pub per_horizon: Vec<HorizonMetrics>,
}

/// Metrics of a single prediction vector against its truth.
pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new(pred.len());
    acc.push(pred, truth)?;
    acc.finish()
}

/// Running sums per horizon step, folded into a [`MetricsReport`].
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    sq: Vec<f64>,
    abs: Vec<f64>,
    pct: Vec<f64>,
    count: usize,
}

impl MetricsAccumulator {
    pub fn new(horizon: usize) -> Self {
        Self {
            sq: vec![0.0; horizon],
            abs: vec![0.0; horizon],
            pct: vec![0.0; horizon],
            count: 0,
        }
    }

    pub fn push(&mut self, pred: &[f64], truth: &[f64]) -> Result<()> {
        if pred.len() != truth.len() || pred.len() != self.sq.len() {
            return Err(shape_err(format!(
                "prediction {} vs truth {} (horizon {})",
                pred.len(),
                truth.len(),
                self.sq.len()
            )));
        }
        if truth.contains(&0.0) {
            return Err(Error::MapeUndefined);
        }
        if pred.iter().chain(truth).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metrics"));
        }
        for (h, (&p, &t)) in pred.iter().zip(truth).enumerate() {
            let e = p - t;
            self.sq[h] += e * e;
            self.abs[h] += e.abs();
            self.pct[h] += (e / t).abs();
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.count == 0 || self.sq.is_empty() {
            return Err(shape_err("no predictions to score"));
        }
        let c = self.count as f64;
        let per_horizon: Vec<HorizonMetrics> = (0..self.sq.len())
            .map(|h| HorizonMetrics {
                rmse_s: (self.sq[h] / c).sqrt(),
                mae_s: self.abs[h] / c,
                mape_pct: 100.0 * self.pct[h] / c,
            })
            .collect();
        let n = self.count * self.sq.len();
        let total = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
        Ok(MetricsReport {
            rmse_s: total(&self.sq).sqrt(),
            mae_s: total(&self.abs),
            mape_pct: 100.0 * total(&self.pct),
            n,
            per_horizon,
        })
    }
}
