//! CNN backbone: period folding with inception-style 2-D convolutions, with
//! optional scaling/shifting compensation of the block output.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::compensation::{CompensationFactors, CompensationNet, FeatureScales};
use crate::error::{Error, Result};
use crate::model::{Frontend, Normalization, SampleForward};
use crate::nn::Inception;
use crate::sample::TemporalSample;
use crate::spectral::{fold_index, softmax_weights, top_k_periods, PeriodDecomposition};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    InsideEachBlock,
    #[default]
    AfterLastBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub k: usize,
    pub n_kernels: usize,
    pub n_p: usize,
    pub n_f: usize,
    pub placement: Placement,
    /// `false` gives the uncompensated base model.
    pub compensation: bool,
    pub mlp_hidden: usize,
}

impl Default for CnnModelConfig {
    fn default() -> Self {
        Self {
            d_model: 16,
            layers: 2,
            k: 3,
            n_kernels: 6,
            n_p: 10,
            n_f: 5,
            placement: Placement::AfterLastBlock,
            compensation: true,
            mlp_hidden: 128,
        }
    }
}

impl CnnModelConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.n_p + self.n_f;
        if [
            self.d_model,
            self.layers,
            self.k,
            self.n_kernels,
            self.n_f,
            self.mlp_hidden,
        ]
        .contains(&0)
            || self.n_p < 2
        {
            return Err(Error::Config(
                "cnn sizes must be positive and n_p >= 2".into(),
            ));
        }
        if 2 * self.k >= t {
            return Err(Error::Config(format!(
                "k = {} needs k < T/2 = {t}/2",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CnnBlock {
    pub first: Inception,
    pub second: Inception,
}

#[derive(Clone, Debug)]
pub struct CnnModel {
    pub cfg: CnnModelConfig,
    pub frontend: Frontend,
    pub blocks: Vec<CnnBlock>,
    pub comp: Option<CompensationNet>,
    pub scales: FeatureScales,
    /// Replace the estimated factors by τ = 1, Δ = 0 (still applied).
    pub force_neutral: bool,
}

impl CnnModel {
    pub fn new(
        cfg: CnnModelConfig,
        normalization: Normalization,
        scales: FeatureScales,
        seed: u64,
        store: &mut ParamStore,
    ) -> Result<Self> {
        cfg.validate()?;
        let frontend = Frontend::new(store, normalization, cfg.n_p, cfg.n_f, cfg.d_model, seed);
        let blocks = (0..cfg.layers)
            .map(|l| CnnBlock {
                first: Inception::new(
                    store,
                    &format!("block{l}.inc0"),
                    cfg.n_kernels,
                    cfg.d_model,
                    cfg.d_model,
                    seed,
                ),
                second: Inception::new(
                    store,
                    &format!("block{l}.inc1"),
                    cfg.n_kernels,
                    cfg.d_model,
                    cfg.d_model,
                    seed,
                ),
            })
            .collect();
        let t = cfg.n_p + cfg.n_f;
        let comp = cfg.compensation.then(|| {
            CompensationNet::new(
                store,
                "comp",
                cfg.n_p,
                cfg.mlp_hidden,
                1,
                t * cfg.d_model,
                seed,
            )
        });
        Ok(Self {
            cfg,
            frontend,
            blocks,
            comp,
            scales,
            force_neutral: false,
        })
    }

    fn t(&self) -> usize {
        self.cfg.n_p + self.cfg.n_f
    }

    /// One 2-D block: `x + Σ_i w_i · unfold(inc(relu(inc(fold(x)))))`.
    pub fn block(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        block: &CnnBlock,
        x: Var,
        pd: &PeriodDecomposition,
    ) -> Result<Var> {
        let (t, d) = (self.t(), self.cfg.d_model);
        let weights = softmax_weights(&pd.amplitudes)?;
        let mut acc = x;
        for ((&f, &p), &w) in pd.freqs.iter().zip(&pd.periods).zip(&weights) {
            let grid = tape.gather_rows(x, d, fold_index(t, f, p)?, vec![f, p, d])?;
            let h = block.first.forward(tape, store, grid)?;
            let h = tape.relu(h)?;
            let h = block.second.forward(tape, store, h)?;
            let back = tape.gather_rows(h, d, (0..t).map(Some).collect(), vec![t, d])?;
            let scaled = tape.scale(back, w);
            acc = tape.add(acc, scaled)?;
        }
        Ok(acc)
    }

    /// Estimated compensation factors for one sample (τ = 1, Δ = 0 without
    /// an estimator or when forced neutral).
    pub fn estimate_compensation(
        &self,
        store: &ParamStore,
        sample: &TemporalSample,
    ) -> Result<CompensationFactors> {
        let shape = [self.t(), self.cfg.d_model];
        match (&self.comp, self.force_neutral) {
            (Some(c), false) => {
                let raw = sample.past_tensor();
                let stats = self.frontend_stats(&raw)?;
                c.estimate(store, &raw, &stats, &self.scales, &shape)
            }
            _ => Ok(CompensationFactors {
                tau: 1.0,
                delta: Tensor::zeros(&shape),
            }),
        }
    }

    fn frontend_stats(
        &self,
        raw: &Tensor,
    ) -> Result<crate::stationarization::StationarizationStats> {
        Ok(match self.frontend.normalization {
            Normalization::Off => {
                crate::stationarization::StationarizationStats::identity(raw.shape()[1])
            }
            _ => crate::stationarization::normalize(raw)?.1,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sample: &TemporalSample,
        plan: Option<&[PeriodDecomposition]>,
    ) -> Result<SampleForward> {
        let (mut x, prep) = self.frontend.embed(tape, store, sample)?;
        let comp = match (&self.comp, self.force_neutral) {
            (Some(_), true) => {
                let tau = tape.constant(Tensor::scalar(1.0));
                let delta = tape.constant(Tensor::zeros(&[self.t(), self.cfg.d_model]));
                Some((tau, delta))
            }
            (Some(c), false) => {
                let (tau, delta) =
                    c.forward(tape, store, &prep.raw_past, &prep.stats, &self.scales)?;
                let delta = tape.reshape(delta, vec![self.t(), self.cfg.d_model])?;
                Some((tau, delta))
            }
            (None, _) => None,
        };
        let mut used = Vec::with_capacity(self.blocks.len());
        let last = self.blocks.len() - 1;
        for (l, block) in self.blocks.iter().enumerate() {
            let pd = match plan {
                Some(p) => p
                    .get(l)
                    .cloned()
                    .ok_or_else(|| Error::Shape("period plan shorter than block count".into()))?,
                None => top_k_periods(tape.value(x), self.cfg.k)?,
            };
            x = self.block(tape, store, block, x, &pd)?;
            used.push(pd);
            let apply = match self.cfg.placement {
                Placement::InsideEachBlock => true,
                Placement::AfterLastBlock => l == last,
            };
            if let (Some((tau, delta)), true) = (comp, apply) {
                x = tape.scale_by(x, tau)?;
                x = tape.add(x, delta)?;
            }
        }
        let pred_norm = self.frontend.head(tape, store, x, &prep)?;
        if tape
            .value(pred_norm)
            .values()
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(Error::Diverged("non-finite activations".into()));
        }
        Ok(SampleForward {
            pred_norm,
            stats: prep.stats,
            plan: used,
        })
    }
}
