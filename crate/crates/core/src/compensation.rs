//! MLP estimators of the scaling (τ) and shifting (Δ) factors that re-inject
//! the raw window statistics removed by stationarization.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{ensure_finite, shape_err, Result};
use crate::nn::Mlp;
use crate::sample::{TemporalSample, N_FEATURES};
use crate::stationarization::StationarizationStats;

/// Fixed per-feature divisors applied to raw values before they enter the
/// estimators, so distances in metres and delays in seconds land on a
/// comparable scale. Fitted once on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScales(pub [f64; N_FEATURES]);

impl Default for FeatureScales {
    fn default() -> Self {
        Self([1.0; N_FEATURES])
    }
}

impl FeatureScales {
    /// Root mean square of each raw feature, floored at 1e-3.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a TemporalSample>) -> Self {
        let mut sq = [0.0; N_FEATURES];
        let mut n = 0usize;
        for s in samples {
            for row in &s.past_features {
                for (a, v) in sq.iter_mut().zip(row) {
                    *a += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::default();
        }
        Self(sq.map(|a| (a / n as f64).sqrt().max(1e-3)))
    }
}

/// Scaling and shifting factors for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CompensationFactors {
    pub tau: f64,
    pub delta: Tensor,
}

/// The pair of estimators: `log τ = MLP_σ([raw, σ])`, `Δ = MLP_μ([raw, μ])`.
#[derive(Clone, Debug)]
pub struct CompensationNet {
    pub tau: Mlp,
    pub delta: Mlp,
    pub n_p: usize,
    pub n_tau: usize,
    pub n_delta: usize,
}

impl CompensationNet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_p: usize,
        hidden: usize,
        n_tau: usize,
        n_delta: usize,
        seed: u64,
    ) -> Self {
        let d_in = n_p * N_FEATURES + N_FEATURES;
        Self {
            tau: Mlp::new(
                store,
                &format!("{name}.tau"),
                &[d_in, hidden, hidden, n_tau],
                seed,
                true,
            ),
            delta: Mlp::new(
                store,
                &format!("{name}.delta"),
                &[d_in, hidden, hidden, n_delta],
                seed,
                true,
            ),
            n_p,
            n_tau,
            n_delta,
        }
    }

    /// Scaled estimator inputs `([raw, σ], [raw, μ])`.
    pub fn inputs(
        &self,
        raw_past: &Tensor,
        stats: &StationarizationStats,
        scales: &FeatureScales,
    ) -> Result<(Tensor, Tensor)> {
        if raw_past.shape() != [self.n_p, N_FEATURES] || stats.channels() != N_FEATURES {
            return Err(shape_err(format!(
                "compensation input {:?} for N_p = {}",
                raw_past.shape(),
                self.n_p
            )));
        }
        ensure_finite(raw_past.values(), "compensation")?;
        ensure_finite(&stats.mu, "compensation")?;
        ensure_finite(&stats.sigma, "compensation")?;
        let s = &scales.0;
        let mut raw: Vec<f64> = raw_past
            .values()
            .chunks_exact(N_FEATURES)
            .flat_map(|row| row.iter().zip(s).map(|(v, d)| v / d))
            .collect();
        let n = raw.len();
        raw.extend(stats.sigma.iter().zip(s).map(|(v, d)| v / d));
        let tau_in = Tensor::vector(raw.clone());
        raw.truncate(n);
        raw.extend(stats.mu.iter().zip(s).map(|(v, d)| v / d));
        Ok((tau_in, Tensor::vector(raw)))
    }

    /// Returns `(τ, Δ)` nodes of lengths `n_tau` and `n_delta`; τ = exp(·) > 0.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        raw_past: &Tensor,
        stats: &StationarizationStats,
        scales: &FeatureScales,
    ) -> Result<(Var, Var)> {
        let (tin, din) = self.inputs(raw_past, stats, scales)?;
        let tin = tape.constant(tin);
        let din = tape.constant(din);
        let log_tau = self.tau.forward(tape, store, tin)?;
        let tau = tape.exp(log_tau);
        let delta = self.delta.forward(tape, store, din)?;
        Ok((tau, delta))
    }

    /// Value-only evaluation for a single `[T × d_model]` shift (one τ).
    pub fn estimate(
        &self,
        store: &ParamStore,
        raw_past: &Tensor,
        stats: &StationarizationStats,
        scales: &FeatureScales,
        delta_shape: &[usize],
    ) -> Result<CompensationFactors> {
        let mut tape = Tape::new();
        let (tau, delta) = self.forward(&mut tape, store, raw_past, stats, scales)?;
        let tau = tape.value(tau).values()[0];
        let delta = tape.value(delta).clone().reshaped(delta_shape.to_vec())?;
        Ok(CompensationFactors { tau, delta })
    }
}
