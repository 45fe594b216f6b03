//! Procedural labeled shapes: one filled shape per image over a smooth
//! background, with per-pixel texture inside the shape. The shape carries
//! the low-frequency "semantic" content, the texture the high-frequency
//! detail.
//!
//! File format `CDDS` (little-endian): magic, `u32` version, `u32` count,
//! `u32` channels, `u32` height, `u32` width, `u64` generator seed, `f32`
//! texture amplitude, `count` × `u32` labels, then all pixels as `f32`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::binio::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::substream;

pub const DATASET_MAGIC: [u8; 4] = *b"CDDS";
pub const DATASET_VERSION: u32 = 1;
pub const NUM_SHAPE_CLASSES: usize = 4;
pub const DEFAULT_TEXTURE_AMPLITUDE: f32 = 0.3;
const KIND: &str = "dataset";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeClass {
    Circle = 0,
    Square = 1,
    Triangle = 2,
    Cross = 3,
}

impl ShapeClass {
    pub fn from_index(i: usize) -> Option<Self> {
        [Self::Circle, Self::Square, Self::Triangle, Self::Cross]
            .get(i)
            .copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Circle => "circle",
            Self::Square => "square",
            Self::Triangle => "triangle",
            Self::Cross => "cross",
        }
    }

    /// Whether offset `(dx, dy)` from the center lies inside a shape of radius `r`.
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            Self::Circle => dx * dx + dy * dy <= r * r,
            Self::Square => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
            Self::Triangle => {
                // apex up, base at dy = 0.8r
                let (top, bottom) = (-r, 0.8 * r);
                if dy < top || dy > bottom {
                    return false;
                }
                let frac = (dy - top) / (bottom - top);
                dx.abs() <= frac * r
            }
            Self::Cross => {
                let arm = r / 3.0;
                (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorOptions {
    pub n: usize,
    pub size: usize,
    pub channels: usize,
    pub seed: u64,
    /// Standard deviation of the per-pixel Gaussian interior texture.
    pub texture_amplitude: f32,
}

impl GeneratorOptions {
    pub fn new(n: usize, size: usize, seed: u64) -> Self {
        GeneratorOptions {
            n,
            size,
            channels: 1,
            seed,
            texture_amplitude: DEFAULT_TEXTURE_AMPLITUDE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeDataset {
    images: Vec<Tensor<f32>>,
    labels: Vec<usize>,
    shape: [usize; 3],
    seed: u64,
    texture_amplitude: f32,
}

impl ShapeDataset {
    pub fn new(
        images: Vec<Tensor<f32>>,
        labels: Vec<usize>,
        seed: u64,
        texture_amplitude: f32,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid("image and label counts differ"));
        }
        let shape = match images.first() {
            Some(img) => {
                let (c, h, w) = img.dims3()?;
                [c, h, w]
            }
            None => return Err(Error::invalid("dataset is empty")),
        };
        if images.iter().any(|i| i.shape() != shape) {
            return Err(Error::invalid("images differ in shape"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= NUM_SHAPE_CLASSES) {
            return Err(Error::ClassOutOfRange {
                class: l,
                num_classes: NUM_SHAPE_CLASSES,
            });
        }
        if images.iter().any(|i| i.max_abs() > 1.0) {
            return Err(Error::invalid("pixel values outside [-1, 1]"));
        }
        Ok(ShapeDataset {
            images,
            labels,
            shape,
            seed,
            texture_amplitude,
        })
    }

    pub fn images(&self) -> &[Tensor<f32>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn texture_amplitude(&self) -> f32 {
        self.texture_amplitude
    }
}

/// Renders image `index`; a pure function of `(opts, index)`.
pub fn render(opts: &GeneratorOptions, index: usize) -> (Tensor<f32>, usize) {
    let mut rng = substream(opts.seed, "data", index as u64);
    let s = opts.size as f64;
    let class = rng.gen_range(0..NUM_SHAPE_CLASSES);
    let shape = ShapeClass::from_index(class).expect("class in range");

    let radius = rng.gen_range(0.22 * s..0.34 * s);
    let margin = 1.0 + radius;
    let cx = rng.gen_range(margin..s - margin);
    let cy = rng.gen_range(margin..s - margin);
    let bg_level = rng.gen_range(-0.8..-0.5);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos() * 0.3, angle.sin() * 0.3);
    let fills: Vec<f64> = (0..opts.channels)
        .map(|_| rng.gen_range(0.1..0.5))
        .collect();

    let n = opts.size;
    let mut data = vec![0.0f32; opts.channels * n * n];
    for (ch, &fill) in fills.iter().enumerate() {
        for y in 0..n {
            for x in 0..n {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = shape.contains(px - cx, py - cy, radius);
                // draw texture for every pixel so the stream position is
                // independent of the shape
                let tex: f64 = rng.sample(StandardNormal);
                let v = if inside {
                    fill + opts.texture_amplitude as f64 * tex
                } else {
                    bg_level + gx * (px / s - 0.5) + gy * (py / s - 0.5)
                };
                data[ch * n * n + y * n + x] = v.clamp(-1.0, 1.0) as f32;
            }
        }
    }
    let img = Tensor::new(vec![opts.channels, n, n], data).expect("rendered pixels are finite");
    (img, class)
}

pub fn generate_with(opts: &GeneratorOptions) -> Result<ShapeDataset> {
    if opts.n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    if opts.size < 16 {
        return Err(Error::invalid(format!(
            "image size {} below minimum 16",
            opts.size
        )));
    }
    if opts.channels == 0 {
        return Err(Error::invalid("channel count must be positive"));
    }
    if !(0.0..=1.0).contains(&opts.texture_amplitude) {
        return Err(Error::invalid("texture amplitude must lie in [0, 1]"));
    }
    let (images, labels): (Vec<_>, Vec<_>) =
        (0..opts.n).into_par_iter().map(|i| render(opts, i)).unzip();
    ShapeDataset::new(images, labels, opts.seed, opts.texture_amplitude)
}

/// `n` single-channel `size × size` images with the default texture.
pub fn generate(n: usize, size: usize, seed: u64) -> Result<ShapeDataset> {
    generate_with(&GeneratorOptions::new(n, size, seed))
}

pub fn dataset_to_bytes(ds: &ShapeDataset) -> Result<Vec<u8>> {
    let [c, h, w] = ds.shape;
    let mut out = Vec::with_capacity(40 + ds.len() * (4 + 4 * c * h * w));
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [ds.len(), c, h, w] {
        put_u32(&mut out, v)?;
    }
    out.extend_from_slice(&ds.seed.to_le_bytes());
    out.extend_from_slice(&ds.texture_amplitude.to_le_bytes());
    for &l in &ds.labels {
        put_u32(&mut out, l)?;
    }
    for img in &ds.images {
        put_f32s(&mut out, img.data());
    }
    Ok(out)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<ShapeDataset> {
    let mut r = Reader::new(bytes, KIND);
    r.magic(DATASET_MAGIC)?;
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: KIND,
            version,
        });
    }
    let (count, c, h, w) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
    let seed = r.u64()?;
    let texture = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    let labels = (0..count).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let per = c * h * w;
    let images = (0..count)
        .map(|_| Tensor::new(vec![c, h, w], r.f32s(per)?))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    ShapeDataset::new(images, labels, seed, texture).map_err(|e| Error::Format {
        kind: KIND,
        detail: e.to_string(),
    })
}

pub fn save_dataset(ds: &ShapeDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ShapeDataset> {
    dataset_from_bytes(&std::fs::read(path)?)
}
