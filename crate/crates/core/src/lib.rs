//! Grounded text-to-video diffusion at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: tensors, kernel ops with analytic backward passes, RNG streams.
//! - [`grounding`]: grounding tracks, uncertainty maps and attention biases.
//! - [`stgl`]: the spatial-temporal grounding layer and its sub-layers.
//! - [`dgn`]: the dynamic gate network that skips grounding attention.
//! - [`diffusion`]: schedule, Grounded-UNet, training, DDIM sampling, checkpoints.
//! - [`pipeline`]: long-range generation, prompt schedules, compositing, metrics, config.

pub mod dgn;
pub mod diffusion;
pub mod error;
pub mod grounding;
pub mod numerics;
pub mod pipeline;
pub mod stgl;

pub use error::{Error, Result};
