use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Weights of one transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T = f32> {
    /// Conditioning → (shift, scale, gate) for attention and MLP, `[D, 6D]`.
    pub mod_w: Tensor<T>,
    pub mod_b: Tensor<T>,
    pub qkv_w: Tensor<T>,
    pub qkv_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub mlp_w1: Tensor<T>,
    pub mlp_b1: Tensor<T>,
    pub mlp_w2: Tensor<T>,
    pub mlp_b2: Tensor<T>,
}

/// All learnable weights of the denoiser. The same type carries gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams<T = f32> {
    pub patch_w: Tensor<T>,
    pub patch_b: Tensor<T>,
    pub time_w1: Tensor<T>,
    pub time_b1: Tensor<T>,
    pub time_w2: Tensor<T>,
    pub time_b2: Tensor<T>,
    /// `num_classes + 1` rows; the last row is the null class.
    pub class_table: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    /// Conditioning → (shift, scale) for the output norm, `[D, 2D]`.
    pub final_mod_w: Tensor<T>,
    pub final_mod_b: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

/// Expected `(name, shape)` of every tensor, in canonical order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.embed_dim;
    let p = cfg.token_dim();
    let hidden = d * cfg.mlp_ratio;
    let mut v = vec![
        ("patch_embed.weight".to_string(), vec![p, d]),
        ("patch_embed.bias".to_string(), vec![d]),
        ("time_mlp.0.weight".to_string(), vec![d, d]),
        ("time_mlp.0.bias".to_string(), vec![d]),
        ("time_mlp.2.weight".to_string(), vec![d, d]),
        ("time_mlp.2.bias".to_string(), vec![d]),
        ("class_embed".to_string(), vec![cfg.num_classes + 1, d]),
    ];
    for i in 0..cfg.depth {
        for (name, shape) in [
            ("modulation.weight", vec![d, 6 * d]),
            ("modulation.bias", vec![6 * d]),
            ("attn.qkv.weight", vec![d, 3 * d]),
            ("attn.qkv.bias", vec![3 * d]),
            ("attn.proj.weight", vec![d, d]),
            ("attn.proj.bias", vec![d]),
            ("mlp.fc1.weight", vec![d, hidden]),
            ("mlp.fc1.bias", vec![hidden]),
            ("mlp.fc2.weight", vec![hidden, d]),
            ("mlp.fc2.bias", vec![d]),
        ] {
            v.push((format!("blocks.{i}.{name}"), shape));
        }
    }
    v.extend([
        ("final.modulation.weight".to_string(), vec![d, 2 * d]),
        ("final.modulation.bias".to_string(), vec![2 * d]),
        ("final.linear.weight".to_string(), vec![d, p]),
        ("final.linear.bias".to_string(), vec![p]),
    ]);
    v
}

impl<T: Real> BlockParams<T> {
    fn tensors(&self) -> [&Tensor<T>; 10] {
        [
            &self.mod_w,
            &self.mod_b,
            &self.qkv_w,
            &self.qkv_b,
            &self.proj_w,
            &self.proj_b,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 10] {
        [
            &mut self.mod_w,
            &mut self.mod_b,
            &mut self.qkv_w,
            &mut self.qkv_b,
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ]
    }
}

impl<T: Real> DenoiserParams<T> {
    /// Builds a parameter set from tensors listed in [`param_layout`] order.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let layout = param_layout(cfg);
        if tensors.len() != layout.len() {
            return Err(Error::shape(
                "DenoiserParams",
                format!("expected {} tensors, got {}", layout.len(), tensors.len()),
            ));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != &shape[..] {
                return Err(Error::shape(
                    "DenoiserParams",
                    format!("{name}: expected {shape:?}, got {:?}", t.shape()),
                ));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked above");
        let (patch_w, patch_b) = (next(), next());
        let (time_w1, time_b1, time_w2, time_b2) = (next(), next(), next(), next());
        let class_table = next();
        let blocks = (0..cfg.depth)
            .map(|_| BlockParams {
                mod_w: next(),
                mod_b: next(),
                qkv_w: next(),
                qkv_b: next(),
                proj_w: next(),
                proj_b: next(),
                mlp_w1: next(),
                mlp_b1: next(),
                mlp_w2: next(),
                mlp_b2: next(),
            })
            .collect();
        Ok(DenoiserParams {
            patch_w,
            patch_b,
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            class_table,
            blocks,
            final_mod_w: next(),
            final_mod_b: next(),
            out_w: next(),
            out_b: next(),
        })
    }

    /// Tensors in [`param_layout`] order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![
            &self.patch_w,
            &self.patch_b,
            &self.time_w1,
            &self.time_b1,
            &self.time_w2,
            &self.time_b2,
            &self.class_table,
        ];
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.extend([
            &self.final_mod_w,
            &self.final_mod_b,
            &self.out_w,
            &self.out_b,
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![
            &mut self.patch_w,
            &mut self.patch_b,
            &mut self.time_w1,
            &mut self.time_b1,
            &mut self.time_w2,
            &mut self.time_b2,
            &mut self.class_table,
        ];
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.extend([
            &mut self.final_mod_w,
            &mut self.final_mod_b,
            &mut self.out_w,
            &mut self.out_b,
        ]);
        v
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let tensors = param_layout(cfg)
            .iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        Self::from_tensors(cfg, tensors)
    }

    /// Training initialization: Xavier-uniform linear layers, N(0, 0.02²)
    /// embeddings, and zeroed modulation and output layers so the initial
    /// prediction is exactly zero.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut tensors = Vec::new();
        let embed = Normal::new(0.0, 0.02).expect("valid normal");
        for (name, shape) in param_layout(cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".bias")
                || name.contains("modulation")
                || name.starts_with("final.linear")
            {
                vec![T::zero(); n]
            } else if name == "class_embed" || name.starts_with("time_mlp") {
                (0..n).map(|_| T::lit(embed.sample(rng))).collect()
            } else {
                let (fan_in, fan_out) = (shape[0], shape[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let u = Uniform::new_inclusive(-a, a);
                (0..n).map(|_| T::lit(u.sample(rng))).collect()
            };
            tensors.push(Tensor::new(shape, data)?);
        }
        Self::from_tensors(cfg, tensors)
    }

    /// Every entry drawn from N(0, scale²); used for gradient checks and
    /// tests that need a network with non-trivial output.
    pub fn init_random(cfg: &ModelConfig, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let dist = Normal::new(0.0, scale).map_err(|e| Error::invalid(e.to_string()))?;
        let tensors = param_layout(cfg)
            .into_iter()
            .map(|(_, shape)| {
                let n: usize = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| T::lit(dist.sample(rng))).collect())
            })
            .collect::<Result<_>>()?;
        Self::from_tensors(cfg, tensors)
    }

    pub fn cast<U: Real>(&self, cfg: &ModelConfig) -> Result<DenoiserParams<U>> {
        let tensors = self
            .tensors()
            .into_iter()
            .map(|t| t.cast())
            .collect::<Result<_>>()?;
        DenoiserParams::from_tensors(cfg, tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// `self += other`, tensor by tensor in canonical order.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: T) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn layout_round_trips_through_from_tensors() {
        let cfg = ModelConfig::default();
        let p: DenoiserParams<f32> =
            DenoiserParams::init(&cfg, &mut substream(0, "init", 0)).unwrap();
        let layout = param_layout(&cfg);
        let ts = p.tensors();
        assert_eq!(ts.len(), layout.len());
        for ((_, s), t) in layout.iter().zip(&ts) {
            assert_eq!(t.shape(), &s[..]);
        }
        let rebuilt =
            DenoiserParams::from_tensors(&cfg, ts.into_iter().cloned().collect()).unwrap();
        assert_eq!(rebuilt, p);
        assert_eq!(p.class_table.shape()[0], cfg.num_classes + 1);
    }

    #[test]
    fn output_head_starts_at_zero() {
        let cfg = ModelConfig::default();
        let p: DenoiserParams<f32> =
            DenoiserParams::init(&cfg, &mut substream(0, "init", 0)).unwrap();
        assert_eq!(p.out_w.max_abs(), 0.0);
        assert_eq!(p.out_b.max_abs(), 0.0);
        assert!(p.patch_w.max_abs() > 0.0);
    }

    #[test]
    fn from_tensors_rejects_wrong_shapes() {
        let cfg = ModelConfig::default();
        let mut ts: Vec<Tensor<f32>> = param_layout(&cfg)
            .iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        ts[0] = Tensor::zeros(&[1, 1]);
        assert!(DenoiserParams::from_tensors(&cfg, ts).is_err());
    }
}
