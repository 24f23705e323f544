//! Sliding-window samples and the JSON-lines dataset format.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Past feature columns: `[S_t, T_t, T_d, I, T̄_t]`.
pub const DISTANCE: usize = 0;
pub const TRAVEL_TIME: usize = 1;
pub const DELAY: usize = 2;
pub const SIGNAL: usize = 3;
pub const MEAN_TRAVEL_TIME: usize = 4;
pub const N_FEATURES: usize = 5;
/// Context columns: `[peak, weekend]`.
pub const N_CONTEXT: usize = 2;

pub const MIN_DELAY_S: f64 = -300.0;
pub const MAX_DELAY_S: f64 = 1000.0;

pub const DATASET_SCHEMA: &str = "nsatp-ds/1";

/// One window: `N_p` past stops, `N_f` future stops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalSample {
    pub past_features: Vec<[f64; N_FEATURES]>,
    pub context: Vec<[u8; N_CONTEXT]>,
    pub future_schedule: Vec<f64>,
    pub future_delay_truth: Vec<f64>,
    pub future_arrival_truth: Vec<f64>,
}

impl TemporalSample {
    pub fn n_p(&self) -> usize {
        self.past_features.len()
    }

    pub fn n_f(&self) -> usize {
        self.future_schedule.len()
    }

    pub fn past_tensor(&self) -> Tensor {
        let v = self.past_features.iter().flatten().copied().collect();
        Tensor::new(vec![self.n_p(), N_FEATURES], v).expect("fixed width")
    }

    pub fn context_tensor(&self) -> Tensor {
        let v = self
            .context
            .iter()
            .flatten()
            .map(|&b| f64::from(b))
            .collect();
        Tensor::new(vec![self.context.len(), N_CONTEXT], v).expect("fixed width")
    }

    pub fn past_delays(&self) -> Vec<f64> {
        self.past_features.iter().map(|r| r[DELAY]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        let (n_p, n_f) = (self.n_p(), self.n_f());
        if n_p == 0 || n_f == 0 {
            return bad("empty past or future".into());
        }
        if self.context.len() != n_p + n_f {
            return bad(format!(
                "context has {} rows, expected {}",
                self.context.len(),
                n_p + n_f
            ));
        }
        if self.future_delay_truth.len() != n_f || self.future_arrival_truth.len() != n_f {
            return bad("future vectors differ in length".into());
        }
        if self.context.iter().flatten().any(|&b| b > 1) {
            return bad("context entries must be 0 or 1".into());
        }
        let all = self
            .past_features
            .iter()
            .flatten()
            .chain(&self.future_schedule)
            .chain(&self.future_delay_truth)
            .chain(&self.future_arrival_truth);
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if self
            .past_features
            .iter()
            .any(|r| r[SIGNAL] != 0.0 && r[SIGNAL] != 1.0)
        {
            return bad("signal flag must be 0 or 1".into());
        }
        let delays = self.past_delays();
        if delays
            .iter()
            .chain(&self.future_delay_truth)
            .any(|d| !(MIN_DELAY_S..=MAX_DELAY_S).contains(d))
        {
            return bad("delay outside clamp window".into());
        }
        for i in 0..n_f {
            let sum = self.future_schedule[i] + self.future_delay_truth[i];
            if (sum - self.future_arrival_truth[i]).abs() > 1e-6 {
                return bad(format!("arrival != schedule + delay at horizon {i}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A sample tagged with its split and origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub split: Split,
    pub day: u32,
    pub trip: u32,
    #[serde(flatten)]
    pub sample: TemporalSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub n_p: usize,
    pub n_f: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub skipped_trips: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(n_p: usize, n_f: usize, seed: u64) -> Self {
        Self {
            header: DatasetHeader {
                schema: DATASET_SCHEMA.to_string(),
                n_p,
                n_f,
                seed,
                skipped_trips: 0,
            },
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TemporalSample> {
        self.records
            .iter()
            .filter(move |r| r.split == split)
            .map(|r| &r.sample)
    }

    pub fn split_vec(&self, split: Split) -> Vec<&TemporalSample> {
        self.split(split).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let head = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&head)?;
        if header.schema != DATASET_SCHEMA {
            return Err(Error::Format(format!(
                "unsupported dataset schema {:?}",
                header.schema
            )));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("line {}: {e}", i + 2)))?;
            rec.sample
                .validate()
                .map_err(|e| Error::Format(format!("line {}: {e}", i + 2)))?;
            if rec.sample.n_p() != header.n_p || rec.sample.n_f() != header.n_f {
                return Err(Error::Format(format!(
                    "line {}: window size differs from header",
                    i + 2
                )));
            }
            records.push(rec);
        }
        Ok(Self { header, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}
