//! Pieces shared by both backbones: input normalisation, the conv1d
//! embedding and the output head, plus the [`Model`] wrapper.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::cnn::{CnnModel, CnnModelConfig};
use crate::compensation::FeatureScales;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Linear};
use crate::sample::{TemporalSample, DELAY, N_CONTEXT, N_FEATURES};
use crate::spectral::PeriodDecomposition;
use crate::stationarization::{normalize, StationarizationStats};
use crate::swin::{SwinModel, SwinModelConfig};

/// How the past window is scaled before it reaches the backbone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Per-window standardisation, undone on the delay output.
    #[default]
    Series,
    /// Raw values in, raw delays out.
    Off,
    /// Standardisation followed by a learnable per-feature affine map,
    /// inverted on the delay output before de-normalisation.
    RevIn,
}

pub const EMBED_KERNEL: usize = 3;

/// Normalisation, embedding and projection head.
#[derive(Clone, Debug)]
pub struct Frontend {
    pub normalization: Normalization,
    pub n_p: usize,
    pub n_f: usize,
    pub embed: Conv1d,
    pub head: Linear,
    pub revin: Option<(ParamId, ParamId)>,
}

/// Per-sample state carried from the input side to the output head.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub raw_past: Tensor,
    pub stats: StationarizationStats,
    revin_delay: Option<(Var, Var)>,
}

impl Frontend {
    pub fn new(
        store: &mut ParamStore,
        normalization: Normalization,
        n_p: usize,
        n_f: usize,
        d_model: usize,
        seed: u64,
    ) -> Self {
        let embed = Conv1d::new(
            store,
            "embed",
            EMBED_KERNEL,
            N_FEATURES + N_CONTEXT,
            d_model,
            seed,
        );
        let revin = (normalization == Normalization::RevIn).then(|| {
            (
                store.add("revin.gamma", Tensor::full(&[N_FEATURES], 1.0)),
                store.add("revin.beta", Tensor::zeros(&[N_FEATURES])),
            )
        });
        let head = Linear::new(store, "head", d_model, 1, seed);
        Self {
            normalization,
            n_p,
            n_f,
            embed,
            head,
            revin,
        }
    }

    pub fn t(&self) -> usize {
        self.n_p + self.n_f
    }

    fn check(&self, sample: &TemporalSample) -> Result<()> {
        if sample.n_p() != self.n_p || sample.n_f() != self.n_f {
            return Err(Error::Shape(format!(
                "sample window {}→{} does not match model {}→{}",
                sample.n_p(),
                sample.n_f(),
                self.n_p,
                self.n_f
            )));
        }
        Ok(())
    }

    /// Normalises the window and embeds `[features, context]` into `[T × d_model]`.
    /// Future rows carry zero features and their real context.
    pub fn embed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sample: &TemporalSample,
    ) -> Result<(Var, Prepared)> {
        self.check(sample)?;
        let raw_past = sample.past_tensor();
        let (normed, stats) = match self.normalization {
            Normalization::Off => (
                raw_past.clone(),
                StationarizationStats::identity(N_FEATURES),
            ),
            Normalization::Series | Normalization::RevIn => normalize(&raw_past)?,
        };
        let mut past = tape.constant(normed);
        let mut revin_delay = None;
        if let Some((g, b)) = self.revin {
            let gv = tape.param(store, g);
            let bv = tape.param(store, b);
            past = tape.mul_row(past, gv)?;
            past = tape.add_row(past, bv)?;
            let pick = vec![Some(DELAY)];
            let gd = tape.gather_rows(gv, 1, pick.clone(), vec![1])?;
            let bd = tape.gather_rows(bv, 1, pick, vec![1])?;
            revin_delay = Some((gd, bd));
        }
        let t = self.t();
        let index = (0..t).map(|i| (i < self.n_p).then_some(i)).collect();
        let feats = tape.gather_rows(past, N_FEATURES, index, vec![t, N_FEATURES])?;
        let ctx = tape.constant(sample.context_tensor());
        let input = tape.concat_cols(feats, ctx)?;
        let x = self.embed.forward(tape, store, input)?;
        Ok((
            x,
            Prepared {
                raw_past,
                stats,
                revin_delay,
            },
        ))
    }

    /// Projects `[T × d_model]` to one value per step and keeps the last `N_f`,
    /// on the normalised delay scale.
    pub fn head(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        prep: &Prepared,
    ) -> Result<Var> {
        let y = self.head.forward(tape, store, x)?;
        let t = self.t();
        let index = (self.n_p..t).map(Some).collect();
        let mut y = tape.gather_rows(y, 1, index, vec![self.n_f])?;
        if let Some((gd, bd)) = prep.revin_delay {
            let neg_b = tape.scale(bd, -1.0);
            y = tape.add_scalar(y, neg_b)?;
            y = tape.div_by(y, gd)?;
        }
        Ok(y)
    }
}

/// Output of one differentiable forward pass.
#[derive(Clone, Debug)]
pub struct SampleForward {
    /// Predicted future delays on the normalised scale, `[N_f]`.
    pub pred_norm: Var,
    pub stats: StationarizationStats,
    /// Periods chosen in each block, in order.
    pub plan: Vec<PeriodDecomposition>,
}

impl SampleForward {
    pub fn delays(&self, tape: &Tape) -> Vec<f64> {
        let (s, m) = (self.stats.sigma[DELAY], self.stats.mu[DELAY]);
        tape.value(self.pred_norm)
            .values()
            .iter()
            .map(|&p| s * p + m)
            .collect()
    }
}

/// Regression target on the same scale as [`SampleForward::pred_norm`].
pub fn normalized_target(sample: &TemporalSample, stats: &StationarizationStats) -> Vec<f64> {
    let (s, m) = (stats.sigma[DELAY], stats.mu[DELAY]);
    sample
        .future_delay_truth
        .iter()
        .map(|&d| (d - m) / s)
        .collect()
}

/// Serialisable description sufficient to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backbone", rename_all = "snake_case")]
pub enum ModelSpec {
    Cnn(CnnModelConfig),
    Swin(SwinModelConfig),
}

#[derive(Clone, Debug)]
pub enum Model {
    Cnn(CnnModel),
    Swin(SwinModel),
}

impl Model {
    pub fn build(
        spec: &ModelSpec,
        normalization: Normalization,
        scales: FeatureScales,
        seed: u64,
        store: &mut ParamStore,
    ) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Cnn(c) => Model::Cnn(CnnModel::new(
                c.clone(),
                normalization,
                scales,
                seed,
                store,
            )?),
            ModelSpec::Swin(c) => Model::Swin(SwinModel::new(
                c.clone(),
                normalization,
                scales,
                seed,
                store,
            )?),
        })
    }

    pub fn frontend(&self) -> &Frontend {
        match self {
            Model::Cnn(m) => &m.frontend,
            Model::Swin(m) => &m.frontend,
        }
    }

    /// Differentiable forward pass. With `plan = Some(..)` the period choice
    /// of every block is replayed instead of recomputed.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sample: &TemporalSample,
        plan: Option<&[PeriodDecomposition]>,
    ) -> Result<SampleForward> {
        match self {
            Model::Cnn(m) => m.forward(tape, store, sample, plan),
            Model::Swin(m) => m.forward(tape, store, sample, plan),
        }
    }

    /// Predicted arrival times (schedule plus de-normalised delays).
    pub fn predict(&self, store: &ParamStore, sample: &TemporalSample) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, sample, None)?;
        let delays = out.delays(&tape);
        if delays.iter().any(|d| !d.is_finite()) {
            return Err(Error::Diverged("non-finite prediction".into()));
        }
        Ok(delays
            .iter()
            .zip(&sample.future_schedule)
            .map(|(d, s)| s + d)
            .collect())
    }

    /// Predicted future delays in seconds.
    pub fn predict_delays(&self, store: &ParamStore, sample: &TemporalSample) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, sample, None)?;
        Ok(out.delays(&tape))
    }
}

/// Mean of the per-sample MSE losses of a minibatch, on a single tape.
pub fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    store: &ParamStore,
    batch: &[&TemporalSample],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for s in batch {
        let out = model.forward(tape, store, s, None)?;
        let target = tape.constant(Tensor::vector(normalized_target(s, &out.stats)));
        let l = tape.mse(out.pred_norm, target)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::Shape("empty batch".into()))?;
    Ok(tape.scale(total, 1.0 / batch.len() as f64))
}
