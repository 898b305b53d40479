//! Density-scaled softmax classification.
//!
//! An encoder maps inputs to a latent space, a linear classifier produces
//! logits there, and a density fitted on the training latents scales those
//! logits so predictions soften towards uniform away from the data.

pub mod checkpoint;
pub mod data;
pub mod density;
mod error;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod predictor;

pub use error::{Error, Result};
