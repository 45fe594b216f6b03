use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the miniature diffusion transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub num_classes: usize,
    pub mlp_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            channels: 1,
            patch_size: 4,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            num_classes: 4,
            mlp_ratio: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("depth", self.depth),
            ("heads", self.heads),
            ("num_classes", self.num_classes),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model {name} must be positive")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::invalid(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        // 2-D sin/cos position embedding splits the width four ways
        if !self.embed_dim.is_multiple_of(4) {
            return Err(Error::invalid(format!(
                "embed dim {} must be a multiple of 4",
                self.embed_dim
            )));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Token count `N = (H/p)²`.
    pub fn num_tokens(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    /// Width of a patchified token, `p·p·C`.
    pub fn token_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }
}

/// Conditioning input: a class index or the null class ∅.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    Class(usize),
    Null,
}

impl Condition {
    /// Row of the class embedding table; ∅ is the extra last row.
    pub fn table_row(self, num_classes: usize) -> Result<usize> {
        match self {
            Condition::Class(c) if c < num_classes => Ok(c),
            Condition::Class(c) => Err(Error::ClassOutOfRange {
                class: c,
                num_classes,
            }),
            Condition::Null => Ok(num_classes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_tokens(), 64);
        assert_eq!(c.token_dim(), 16);
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let bad_patch = ModelConfig {
            patch_size: 5,
            ..Default::default()
        };
        assert!(bad_patch.validate().is_err());
        let bad_heads = ModelConfig {
            heads: 3,
            ..Default::default()
        };
        assert!(bad_heads.validate().is_err());
        let zero_depth = ModelConfig {
            depth: 0,
            ..Default::default()
        };
        assert!(zero_depth.validate().is_err());
    }

    #[test]
    fn null_condition_is_last_row() {
        assert_eq!(Condition::Null.table_row(4).unwrap(), 4);
        assert_eq!(Condition::Class(3).table_row(4).unwrap(), 3);
        assert!(Condition::Class(4).table_row(4).is_err());
    }
}
