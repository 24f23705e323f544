use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnn::CnnModelConfig;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Normalization};
use crate::sim::SimConfig;
use crate::swin::SwinModelConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    NsatpCnn,
    NsatpSwin,
    ArrivalnetCnn,
    ArrivalnetSwin,
    Persistence,
    ScheduleOnly,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::NsatpCnn => "nsatp_cnn",
            ModelKind::NsatpSwin => "nsatp_swin",
            ModelKind::ArrivalnetCnn => "arrivalnet_cnn",
            ModelKind::ArrivalnetSwin => "arrivalnet_swin",
            ModelKind::Persistence => "persistence",
            ModelKind::ScheduleOnly => "schedule_only",
        }
    }

    pub fn trainable(self) -> bool {
        !matches!(self, ModelKind::Persistence | ModelKind::ScheduleOnly)
    }
}

/// One experiment: model choice, switches, optimisation settings and data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    /// Series stationarization on (`true`) or raw inputs (`false`).
    pub stationarization: bool,
    /// Learnable per-feature affine map after stationarization.
    pub revin: bool,
    pub cnn: CnnModelConfig,
    pub swin: SwinModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub patience: usize,
    /// Use at most this many training samples (evenly spaced), if set.
    pub max_train_samples: Option<usize>,
    /// Use at most this many validation samples (evenly spaced), if set.
    pub max_val_samples: Option<usize>,
    /// Test windows concatenated for the ADF ratio.
    pub adf_samples: usize,
    pub dataset: Option<PathBuf>,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::default(),
            stationarization: true,
            revin: false,
            cnn: CnnModelConfig::default(),
            swin: SwinModelConfig::default(),
            epochs: 20,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
            patience: 5,
            max_train_samples: None,
            max_val_samples: None,
            adf_samples: 200,
            dataset: None,
            sim: SimConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml(&s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.revin && !self.stationarization {
            return Err(Error::Config("revin requires stationarization".into()));
        }
        match self.model {
            ModelKind::NsatpCnn | ModelKind::ArrivalnetCnn => self.cnn.validate()?,
            ModelKind::NsatpSwin | ModelKind::ArrivalnetSwin => self.swin.validate()?,
            _ => {}
        }
        if self.model == ModelKind::NsatpSwin && !self.swin.compensated() {
            return Err(Error::Config(
                "nsatp_swin needs comp_inner or comp_outer; use arrivalnet_swin for neither".into(),
            ));
        }
        Ok(())
    }

    pub fn normalization(&self) -> Normalization {
        match (self.stationarization, self.revin) {
            (false, _) => Normalization::Off,
            (true, true) => Normalization::RevIn,
            (true, false) => Normalization::Series,
        }
    }

    /// Window sizes the selected model expects.
    pub fn window(&self) -> (usize, usize) {
        match self.model {
            ModelKind::NsatpSwin | ModelKind::ArrivalnetSwin => (self.swin.n_p, self.swin.n_f),
            ModelKind::NsatpCnn | ModelKind::ArrivalnetCnn => (self.cnn.n_p, self.cnn.n_f),
            _ => (self.sim.n_p, self.sim.n_f),
        }
    }

    /// Sets the window of every model section and of the simulator.
    pub fn set_window(&mut self, n_p: usize, n_f: usize) {
        self.cnn.n_p = n_p;
        self.cnn.n_f = n_f;
        self.swin.n_p = n_p;
        self.swin.n_f = n_f;
        self.sim.n_p = n_p;
        self.sim.n_f = n_f;
    }

    /// Architecture of a trainable model kind.
    pub fn model_spec(&self) -> Option<ModelSpec> {
        match self.model {
            ModelKind::NsatpCnn => Some(ModelSpec::Cnn(CnnModelConfig {
                compensation: true,
                ..self.cnn.clone()
            })),
            ModelKind::ArrivalnetCnn => Some(ModelSpec::Cnn(CnnModelConfig {
                compensation: false,
                ..self.cnn.clone()
            })),
            ModelKind::NsatpSwin => Some(ModelSpec::Swin(self.swin.clone())),
            ModelKind::ArrivalnetSwin => Some(ModelSpec::Swin(SwinModelConfig {
                comp_inner: false,
                comp_outer: false,
                ..self.swin.clone()
            })),
            ModelKind::Persistence | ModelKind::ScheduleOnly => None,
        }
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
