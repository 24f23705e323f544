//! Arrival time prediction with series stationarization and learned
//! recovery of the non-stationary information it removes.
//!
//! The crate bundles a small reverse-mode autodiff engine, the two backbones
//! (a CNN over period-folded sequences and a shifted-window attention model),
//! a synthetic transit simulator, ADF and error metrics, and the training
//! harness driven by the `nsatp` command line tool.

pub mod adf;
pub mod autodiff;
pub mod cnn;
pub mod compensation;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sample;
pub mod sim;
pub mod spectral;
pub mod stationarization;
pub mod swin;

pub use error::{Error, Result};
