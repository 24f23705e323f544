//! Experiment orchestration: configuration, training, evaluation and reports.

pub mod ablate;
pub mod config;
pub mod gradcheck;
pub mod report;
pub mod train;

pub use ablate::{ablate, ablation_grid, AblationCell};
pub use config::{ExperimentConfig, ModelKind};
pub use report::{text_table, RunReport};
pub use train::{evaluate, train, Evaluation, Predictor, Trained};
