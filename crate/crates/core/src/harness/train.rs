use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind};
use super::report::{provenance, EpochLog, RunReport, REPORT_SCHEMA};
use crate::adf::adf_ratio;
use crate::autodiff::params::name_seed;
use crate::autodiff::{Adam, Checkpoint, ParamStore, Tape, Tensor};
use crate::compensation::FeatureScales;
use crate::error::{Error, Result};
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::model::{batch_loss, normalized_target, Model, ModelSpec, Normalization};
use crate::sample::{Dataset, Split, TemporalSample, DELAY};

/// A model ready for inference, or one of the training-free baselines.
#[derive(Clone, Debug)]
pub enum Predictor {
    Learned(Box<Trained>),
    /// Repeats the last observed delay over the horizon.
    Persistence,
    /// Predicts zero delay, i.e. the timetable.
    ScheduleOnly,
}

/// Everything needed to run or persist a trained network.
#[derive(Clone, Debug)]
pub struct Trained {
    pub kind: ModelKind,
    pub spec: ModelSpec,
    pub normalization: Normalization,
    pub scales: FeatureScales,
    pub seed: u64,
    pub model: Model,
    pub store: ParamStore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelKind,
    spec: ModelSpec,
    normalization: Normalization,
    scales: FeatureScales,
    seed: u64,
    n_p: usize,
    n_f: usize,
}

impl Trained {
    pub fn build(
        kind: ModelKind,
        spec: ModelSpec,
        normalization: Normalization,
        scales: FeatureScales,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = Model::build(&spec, normalization, scales.clone(), seed, &mut store)?;
        Ok(Self {
            kind,
            spec,
            normalization,
            scales,
            seed,
            model,
            store,
        })
    }

    pub fn window(&self) -> (usize, usize) {
        let f = self.model.frontend();
        (f.n_p, f.n_f)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (n_p, n_f) = self.window();
        let meta = CheckpointMeta {
            model: self.kind,
            spec: self.spec.clone(),
            normalization: self.normalization,
            scales: self.scales.clone(),
            seed: self.seed,
            n_p,
            n_f,
        };
        self.store
            .to_checkpoint(serde_json::to_value(meta).expect("meta serialises"))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::Format(format!("checkpoint meta: {e}")))?;
        let mut t = Self::build(
            meta.model,
            meta.spec,
            meta.normalization,
            meta.scales,
            meta.seed,
        )?;
        t.store.load_checkpoint(ckpt)?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl Predictor {
    pub fn predict_delays(&self, s: &TemporalSample) -> Result<Vec<f64>> {
        match self {
            Predictor::Learned(t) => t.model.predict_delays(&t.store, s),
            Predictor::Persistence => {
                let last = s.past_features.last().map_or(0.0, |r| r[DELAY]);
                Ok(vec![last; s.n_f()])
            }
            Predictor::ScheduleOnly => Ok(vec![0.0; s.n_f()]),
        }
    }

    pub fn predict_arrivals(&self, s: &TemporalSample) -> Result<Vec<f64>> {
        let d = self.predict_delays(s)?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite prediction".into()));
        }
        Ok(d.iter()
            .zip(&s.future_schedule)
            .map(|(d, s)| s + d)
            .collect())
    }
}

/// Test-split metrics with the ADF ratio of the concatenated delay sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub adf_ratio: Option<f64>,
}

/// Every `len/m`-th element, or everything when `m` is `None` or large enough.
pub fn evenly_spaced<T: Copy>(items: &[T], m: Option<usize>) -> Vec<T> {
    match m {
        Some(m) if m < items.len() => (0..m).map(|i| items[i * items.len() / m]).collect(),
        _ => items.to_vec(),
    }
}

pub fn evaluate(
    pred: &Predictor,
    samples: &[&TemporalSample],
    adf_samples: usize,
) -> Result<Evaluation> {
    let n_f = samples
        .first()
        .ok_or_else(|| Error::Shape("no samples to evaluate".into()))?
        .n_f();
    if let Predictor::Learned(t) = pred {
        if t.window().1 != n_f {
            return Err(Error::Config(format!(
                "horizon mismatch: checkpoint predicts {} steps, dataset has {n_f}",
                t.window().1
            )));
        }
    }
    let mut acc = MetricsAccumulator::new(n_f);
    for s in samples {
        acc.push(&pred.predict_arrivals(s)?, &s.future_arrival_truth)?;
    }
    let metrics = acc.finish()?;
    let mut pseq = Vec::new();
    let mut tseq = Vec::new();
    for s in evenly_spaced(samples, Some(adf_samples)) {
        let past = s.past_delays();
        pseq.extend_from_slice(&past);
        pseq.extend(pred.predict_delays(s)?);
        tseq.extend_from_slice(&past);
        tseq.extend_from_slice(&s.future_delay_truth);
    }
    let adf_ratio = if adf_samples == 0 {
        None
    } else {
        adf_ratio(&pseq, &tseq).ok()
    };
    Ok(Evaluation { metrics, adf_ratio })
}

/// Mean per-sample loss of the current parameters, without gradients.
pub fn mean_loss(model: &Model, store: &ParamStore, samples: &[&TemporalSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, store, s, None)?;
        let target = tape.constant(Tensor::vector(normalized_target(s, &out.stats)));
        let l = tape.mse(out.pred_norm, target)?;
        total += tape.value(l).values()[0];
    }
    Ok(total / samples.len().max(1) as f64)
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(_) | Error::Diverged(_) => {
            Error::Diverged(format!("non-finite loss in epoch {epoch}"))
        }
        other => other,
    }
}

pub struct TrainOutput {
    pub predictor: Predictor,
    pub report: RunReport,
}

/// Trains (or, for baselines, just scores) the configured model and evaluates
/// it on the test split.
pub fn train(cfg: &ExperimentConfig, ds: &Dataset) -> Result<TrainOutput> {
    train_labelled(cfg, ds, cfg.model.name())
}

pub fn train_labelled(cfg: &ExperimentConfig, ds: &Dataset, label: &str) -> Result<TrainOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let (n_p, n_f) = (ds.header.n_p, ds.header.n_f);
    if cfg.window() != (n_p, n_f) {
        return Err(Error::Config(format!(
            "config window {:?} does not match dataset {n_p}→{n_f}",
            cfg.window()
        )));
    }
    let train_all = ds.split_vec(Split::Train);
    let train_set = evenly_spaced(&train_all, cfg.max_train_samples);
    let val_set = evenly_spaced(&ds.split_vec(Split::Val), cfg.max_val_samples);
    let test_set = ds.split_vec(Split::Test);
    if test_set.is_empty() {
        return Err(Error::Config("dataset has no test samples".into()));
    }
    let hash = cfg.hash();
    let mut report = RunReport {
        schema: REPORT_SCHEMA.to_string(),
        model: cfg.model.name().to_string(),
        label: label.to_string(),
        config_hash: hash.clone(),
        provenance: provenance(&hash, cfg.seed),
        seed: cfg.seed,
        n_p,
        n_f,
        initial_train_loss: None,
        epochs: Vec::new(),
        best_epoch: None,
        stopped_early: false,
        test: MetricsReport::default(),
        adf_ratio: None,
        wall_time_s: 0.0,
    };
    let predictor = match cfg.model_spec() {
        None => match cfg.model {
            ModelKind::Persistence => Predictor::Persistence,
            _ => Predictor::ScheduleOnly,
        },
        Some(spec) => {
            if train_set.is_empty() || val_set.is_empty() {
                return Err(Error::Config("dataset needs train and val samples".into()));
            }
            let scales = FeatureScales::fit(train_set.iter().copied());
            let mut t = Trained::build(cfg.model, spec, cfg.normalization(), scales, cfg.seed)?;
            fit(cfg, &mut t, &train_set, &val_set, &mut report)?;
            Predictor::Learned(Box::new(t))
        }
    };
    let eval = evaluate(&predictor, &test_set, cfg.adf_samples)?;
    report.test = eval.metrics;
    report.adf_ratio = eval.adf_ratio;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(TrainOutput { predictor, report })
}

/// Minibatch Adam with early stopping on the validation loss. Leaves the
/// best parameters in `t.store`.
fn fit(
    cfg: &ExperimentConfig,
    t: &mut Trained,
    train_set: &[&TemporalSample],
    val_set: &[&TemporalSample],
    report: &mut RunReport,
) -> Result<()> {
    report.initial_train_loss =
        Some(mean_loss(&t.model, &t.store, train_set).map_err(|e| diverged(e, 0))?);
    let mut opt = Adam::new(cfg.lr);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(cfg.seed, &format!("epoch{epoch}")));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TemporalSample> = chunk.iter().map(|&i| train_set[i]).collect();
            let mut tape = Tape::new();
            let loss = batch_loss(&t.model, &mut tape, &t.store, &batch)
                .map_err(|e| diverged(e, epoch))?;
            let lv = tape.value(loss).values()[0];
            if !lv.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}")));
            }
            sum += lv * batch.len() as f64;
            let grads = tape.backward(loss)?;
            opt.step(&mut t.store, &tape, &grads);
        }
        let train_loss = sum / train_set.len() as f64;
        let val_loss = mean_loss(&t.model, &t.store, val_set).map_err(|e| diverged(e, epoch))?;
        report.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, t.store.clone()));
            report.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        t.store = store;
    }
    Ok(())
}
