//! Flow matching viewed as denoising.
//!
//! Every generative model in this crate is a time-indexed denoiser
//! `D(x, t)` or, equivalently, a velocity field `v(x, t)`, linked by
//! `D(x, t) = x + (1 - t) v(x, t)`. On top of that duality the crate
//! provides analytic oracles (the empirical-measure optimal velocity and its
//! MMSE denoiser), a small trainable network with exact gradients, weighted
//! denoising losses, ODE samplers, controlled denoiser perturbations,
//! evaluation metrics and a plug-and-play inpainting solver.

pub mod analysis;
pub mod closedform;
pub mod data;
pub mod datagen;
pub mod error;
pub mod field;
pub mod net;
pub mod path;
pub mod restoration;
pub mod rng;
pub mod sampling;
pub mod training;

pub use data::{Dataset, ImageShape, Sample};
pub use error::{FmError, Result};
pub use field::{Denoiser, VelocityField};
pub use path::{NoiseLevel, TimePoint};
