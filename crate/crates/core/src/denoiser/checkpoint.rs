//! `CDIF` checkpoint files.
//!
//! Layout (all integers little-endian `u32`):
//! magic `CDIF`, version, the eight [`ModelConfig`] fields in declaration
//! order, tensor count, then per tensor: name length, UTF-8 name, rank,
//! dims, and the values as little-endian `f32`.

use std::path::Path;

use super::config::ModelConfig;
use super::network::Denoiser;
use super::params::{param_layout, DenoiserParams};
use crate::binio::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CDIF";
pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "checkpoint";

fn config_fields(c: &ModelConfig) -> [usize; 8] {
    [
        c.image_size,
        c.channels,
        c.patch_size,
        c.embed_dim,
        c.depth,
        c.heads,
        c.num_classes,
        c.mlp_ratio,
    ]
}

pub fn checkpoint_to_bytes(model: &Denoiser<f32>) -> Result<Vec<u8>> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in config_fields(cfg) {
        put_u32(&mut out, v)?;
    }
    let layout = param_layout(cfg);
    put_u32(&mut out, layout.len())?;
    for ((name, _), t) in layout.iter().zip(model.params().tensors()) {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Denoiser<f32>> {
    let mut r = Reader::new(bytes, KIND);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: KIND,
            version,
        });
    }
    let cfg = ModelConfig {
        image_size: r.usize()?,
        channels: r.usize()?,
        patch_size: r.usize()?,
        embed_dim: r.usize()?,
        depth: r.usize()?,
        heads: r.usize()?,
        num_classes: r.usize()?,
        mlp_ratio: r.usize()?,
    };
    cfg.validate().map_err(|e| Error::Format {
        kind: KIND,
        detail: e.to_string(),
    })?;
    let layout = param_layout(&cfg);
    let count = r.usize()?;
    if count != layout.len() {
        return Err(Error::Format {
            kind: KIND,
            detail: format!("expected {} tensors, found {count}", layout.len()),
        });
    }
    let mut tensors = Vec::with_capacity(count);
    for (expected_name, expected_shape) in &layout {
        let name_len = r.usize()?;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Format {
            kind: KIND,
            detail: "tensor name is not UTF-8".into(),
        })?;
        if name != expected_name {
            return Err(Error::Format {
                kind: KIND,
                detail: format!("expected tensor {expected_name}, found {name}"),
            });
        }
        let rank = r.usize()?;
        let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        if &dims != expected_shape {
            return Err(Error::Format {
                kind: KIND,
                detail: format!("{name}: expected shape {expected_shape:?}, found {dims:?}"),
            });
        }
        let n = dims.iter().product();
        tensors.push(Tensor::new(dims, r.f32s(n)?)?);
    }
    r.finish()?;
    Denoiser::new(cfg, DenoiserParams::from_tensors(&cfg, tensors)?)
}

pub fn save_checkpoint(model: &Denoiser<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Denoiser<f32>> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}
