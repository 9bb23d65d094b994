//! Masked-autoencoder pretraining and ejection-fraction fine-tuning for a
//! video vision transformer, built on a small from-scratch autodiff core.
//!
//! Pipeline: [`video`] ingests and preprocesses grayscale clips, [`model`]
//! embeds them as spatiotemporal tubelets and encodes them, [`mae`] hides
//! most tokens and reconstructs them through a lightweight decoder,
//! [`train`] optimizes both stages, and [`metrics`] scores EF predictions.

pub mod config;
pub mod error;
pub mod mae;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
pub mod video;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
