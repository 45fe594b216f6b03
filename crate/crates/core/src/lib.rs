//! Training-free cartoonization for diffusion-transformer sampling.
//!
//! The crate bundles a miniature diffusion transformer, a classifier-free
//! guided sampler with per-token L1 normalization of the predicted noise
//! below a chosen step, a closed-form Gaussian-mixture denoiser for
//! verification, a procedural shapes dataset, training, and spectral
//! analysis of the results.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
mod binio;
pub mod cli;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod numerics;
pub mod pnm;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod training;

pub use denoiser::{Condition, Denoiser, DenoiserParams, ModelConfig, NoisePredictor};
pub use error::{Error, Result};
pub use numerics::Tensor;
pub use sampler::SamplerConfig;
pub use schedule::NoiseSchedule;
