//! Noise-prediction networks: the miniature diffusion transformer and the
//! closed-form Gaussian-mixture oracle.

mod checkpoint;
mod config;
mod embedding;
mod network;
mod oracle;
mod params;
mod tokens;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{Condition, ModelConfig};
pub use embedding::{position_table, timestep_embedding};
pub use network::{Denoiser, ForwardCache};
pub use oracle::{GaussianMixtureOracle, MixtureComponent};
pub use params::{param_layout, BlockParams, DenoiserParams};
pub use tokens::{patchify, unpatchify, TokenGrid};

use crate::error::Result;
use crate::numerics::Tensor;
use crate::schedule::NoiseSchedule;

/// Anything that predicts the noise in `x_t`. The sampler only talks to
/// this trait.
pub trait NoisePredictor: Sync {
    fn predict_noise(&self, x_t: &Tensor<f32>, t: usize, c: Condition) -> Result<Tensor<f32>>;

    /// `[C, H, W]` of the images this predictor accepts.
    fn image_shape(&self) -> [usize; 3];

    /// Patch size defining the token layout used by token normalization.
    fn patch_size(&self) -> usize;
}

impl NoisePredictor for Denoiser<f32> {
    fn predict_noise(&self, x_t: &Tensor<f32>, t: usize, c: Condition) -> Result<Tensor<f32>> {
        self.forward(x_t, t, c)
    }

    fn image_shape(&self) -> [usize; 3] {
        self.config().image_shape()
    }

    fn patch_size(&self) -> usize {
        self.config().patch_size
    }
}

/// Oracle bound to a schedule, usable wherever a trained network is.
/// The condition is ignored.
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    pub oracle: GaussianMixtureOracle,
    pub schedule: NoiseSchedule,
    pub patch_size: usize,
}

impl NoisePredictor for OraclePredictor {
    fn predict_noise(&self, x_t: &Tensor<f32>, t: usize, _c: Condition) -> Result<Tensor<f32>> {
        self.oracle.oracle_eps(x_t, t, &self.schedule)
    }

    fn image_shape(&self) -> [usize; 3] {
        match self.oracle.shape() {
            &[c, h, w] => [c, h, w],
            other => panic!("oracle mean must be C×H×W, got {other:?}"),
        }
    }

    fn patch_size(&self) -> usize {
        self.patch_size
    }
}
