//! Named parameter storage, deterministic initialisation and checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "nsatp-ckpt/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
    index: HashMap<String, ParamId>,
}

/// Stable 64-bit digest of a parameter name, used to derive its RNG stream.
pub fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Registers a parameter. Panics on a duplicate name, which is a
    /// programming error in model construction.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(true);
        id
    }

    /// Registers a parameter drawn from `U(-1/√fan_in, 1/√fan_in)` with a
    /// stream seeded from `(seed, name)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        seed: u64,
    ) -> ParamId {
        let name = name.into();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &name));
        let n: usize = shape.iter().product();
        let vals = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(
            name,
            Tensor::new(shape.to_vec(), vals).expect("shape product"),
        )
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, on: bool) {
        self.trainable[id.0] = on;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let params = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect();
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            meta,
            params,
        }
    }

    /// Overwrites every registered parameter from `ckpt`. Names and shapes
    /// must match exactly.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.params.len() != self.values.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, model has {}",
                ckpt.params.len(),
                self.values.len()
            )));
        }
        for (name, t) in &ckpt.params {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
            if self.values[id.0].shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    t.shape(),
                    self.values[id.0].shape()
                )));
            }
            self.values[id.0] = t.clone();
        }
        Ok(())
    }
}

/// On-disk parameter snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(s)?;
        if ckpt.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Format(format!(
                "unsupported checkpoint schema {:?}",
                ckpt.schema
            )));
        }
        for (name, t) in &ckpt.params {
            let n: usize = t.shape().iter().product();
            if n != t.len() {
                return Err(Error::Format(format!(
                    "parameter {name}: shape/value mismatch"
                )));
            }
            if t.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("parameter {name}: non-finite value")));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
