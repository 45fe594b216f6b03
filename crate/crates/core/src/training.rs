//! ε-prediction training with classifier-free label dropout.
//!
//! The objective is the simplified diffusion loss
//! `E_{t, x₀, ε} ‖ε − ε_θ(√ᾱ_t·x₀ + √(1−ᾱ_t)·ε, t, c)‖²` with `t` uniform on
//! `1..=T`, averaged per element. Every example draws its dropout, step and
//! noise from its own `(seed, step, example)` substream.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ShapeDataset;
use crate::denoiser::{Condition, Denoiser, DenoiserParams, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::rng::{gaussian, substream, substream2};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    pub label_dropout_p: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            steps: 20_000,
            label_dropout_p: 0.1,
            seed: 0,
            checkpoint_every: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.label_dropout_p) {
            return Err(Error::invalid(format!(
                "label dropout {} outside [0, 1]",
                self.label_dropout_p
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("moment decays must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Replaces `c` by ∅ with probability `p`, consuming exactly one draw.
pub fn label_dropout(c: Condition, p: f64, rng: &mut impl Rng) -> Condition {
    let u: f64 = rng.gen();
    if u < p {
        Condition::Null
    } else {
        c
    }
}

/// Mean squared ε-prediction error over a batch of `(x₀, class)` pairs and
/// its exact gradient. `step` selects the per-example random substreams.
pub fn loss_and_grad<T: Real>(
    model: &Denoiser<T>,
    batch: &[(&Tensor<T>, usize)],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(f64, DenoiserParams<T>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let per_example: Vec<(f64, DenoiserParams<T>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, &(x0, class))| {
            let mut rng = substream2(cfg.seed, "train", step, i as u64);
            let cond = label_dropout(Condition::Class(class), cfg.label_dropout_p, &mut rng);
            let t = rng.gen_range(1..=sched.timesteps());
            let eps: Tensor<T> = gaussian(x0.shape(), &mut rng);
            let x_t = sched.q_sample(x0, t, &eps)?;
            let (pred, cache) = model.forward_cached(&x_t, t, cond)?;
            let diff = pred.sub(&eps)?;
            let n = diff.numel() as f64;
            let loss = diff.sum_sq().as_f64() / n;
            let grads = model.backward(&cache, &diff.scale(T::lit(2.0 / n))?)?;
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;

    let mut it = per_example.into_iter();
    let (mut loss, mut grads) = it.next().expect("batch is non-empty");
    for (l, g) in it {
        loss += l;
        grads.accumulate(&g)?;
    }
    let inv_b = 1.0 / batch.len() as f64;
    grads.scale_in_place(T::lit(inv_b));
    let loss = loss * inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((loss, grads))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: DenoiserParams<T>,
    v: DenoiserParams<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: &TrainConfig, model: &ModelConfig) -> Result<Self> {
        Ok(Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            m: DenoiserParams::zeros(model)?,
            v: DenoiserParams::zeros(model)?,
            t: 0,
        })
    }

    pub fn update(
        &mut self,
        params: &mut DenoiserParams<T>,
        grads: &DenoiserParams<T>,
    ) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 / (1.0 - self.beta1.powi(self.t)));
        let c2 = T::lit(1.0 / (1.0 - self.beta2.powi(self.t)));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                md[i] = b1 * md[i] + (T::one() - b1) * gv;
                vd[i] = b2 * vd[i] + (T::one() - b2) * gv * gv;
                *pv -= lr * (md[i] * c1) / ((vd[i] * c2).sqrt() + eps);
            }
            p.check_finite("adam")?;
        }
        Ok(())
    }
}

/// Final model and per-step loss curve.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Denoiser<f32>,
    pub losses: Vec<f64>,
}

/// Trains from the seeded initialization. `on_checkpoint(step, model)` is
/// called every `checkpoint_every` steps.
pub fn train(
    data: &ShapeDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    on_checkpoint: impl FnMut(usize, &Denoiser<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    match cfg.precision {
        Precision::F32 => train_generic::<f32>(data, model_cfg, cfg, sched, on_checkpoint),
        Precision::F64 => train_generic::<f64>(data, model_cfg, cfg, sched, on_checkpoint),
    }
}

fn to_f32<T: Real>(model: &Denoiser<T>) -> Result<Denoiser<f32>> {
    Denoiser::new(*model.config(), model.params().cast(model.config())?)
}

fn train_generic<T: Real>(
    data: &ShapeDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    mut on_checkpoint: impl FnMut(usize, &Denoiser<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    if data.image_shape() != model_cfg.image_shape() {
        return Err(Error::shape(
            "train",
            format!(
                "data {:?} vs model {:?}",
                data.image_shape(),
                model_cfg.image_shape()
            ),
        ));
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= model_cfg.num_classes) {
        return Err(Error::ClassOutOfRange {
            class: bad,
            num_classes: model_cfg.num_classes,
        });
    }
    let images: Vec<Tensor<T>> = data
        .images()
        .iter()
        .map(|i| i.cast())
        .collect::<Result<_>>()?;
    let params = DenoiserParams::<T>::init(model_cfg, &mut substream(cfg.seed, "init", 0))?;
    let mut model = Denoiser::new(*model_cfg, params)?;
    let mut adam = Adam::new(cfg, model_cfg)?;
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut pick = substream(cfg.seed, "batch", step as u64);
        let batch: Vec<(&Tensor<T>, usize)> = (0..cfg.batch_size)
            .map(|_| {
                let i = pick.gen_range(0..images.len());
                (&images[i], data.labels()[i])
            })
            .collect();
        let (loss, grads) = match loss_and_grad(&model, &batch, sched, cfg, step as u64) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged {
                    step,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        adam.update(model.params_mut(), &grads)
            .map_err(|_| Error::Diverged { step, loss })?;
        losses.push(loss);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(step + 1, &to_f32(&model)?)?;
        }
    }
    Ok(TrainOutcome {
        model: to_f32(&model)?,
        losses,
    })
}

/// Writes `step,loss` rows (steps numbered from 1).
pub fn write_loss_csv(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{},{l}", i + 1)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            channels: 1,
            patch_size: 4,
            embed_dim: 16,
            depth: 1,
            heads: 2,
            num_classes: 4,
            mlp_ratio: 2,
        }
    }

    #[test]
    fn label_dropout_extremes_and_frequency() {
        let mut rng = substream(0, "drop", 0);
        assert!((0..1000)
            .all(|_| label_dropout(Condition::Class(2), 0.0, &mut rng) == Condition::Class(2)));
        assert!(
            (0..1000).all(|_| label_dropout(Condition::Class(2), 1.0, &mut rng) == Condition::Null)
        );
        let n = 100_000;
        let nulls = (0..n)
            .filter(|_| label_dropout(Condition::Class(0), 0.1, &mut rng) == Condition::Null)
            .count();
        let freq = nulls as f64 / n as f64;
        // 3σ binomial bound is ~0.0028; tolerance is 0.005
        assert!((freq - 0.1).abs() < 0.005, "{freq}");
    }

    #[test]
    fn zero_head_loss_is_noise_energy() {
        let cfg = tiny();
        let model: Denoiser<f32> = Denoiser::new(
            cfg,
            DenoiserParams::init(&cfg, &mut substream(0, "init", 0)).unwrap(),
        )
        .unwrap();
        let data = generate(64, 16, 3).unwrap();
        let batch: Vec<_> = data
            .images()
            .iter()
            .zip(data.labels())
            .map(|(x, &c)| (x, c))
            .collect();
        let (loss, _) = loss_and_grad(
            &model,
            &batch,
            &NoiseSchedule::default(),
            &TrainConfig::default(),
            0,
        )
        .unwrap();
        assert!((loss - 1.0).abs() < 0.05, "{loss}");
    }

    #[test]
    fn duplicated_examples_contribute_identically() {
        let cfg = tiny();
        let p = DenoiserParams::init_random(&cfg, 0.1, &mut substream(1, "init", 0)).unwrap();
        let model: Denoiser<f64> = Denoiser::new(cfg, p).unwrap();
        let data = generate(1, 16, 5).unwrap();
        let x = data.images()[0].cast::<f64>().unwrap();
        let tc = TrainConfig::default();
        let sched = NoiseSchedule::default();
        // with one example per batch the substream is (seed, step, 0) in both cases
        let (l1, g1) = loss_and_grad(&model, &[(&x, 1)], &sched, &tc, 7).unwrap();
        let (l2, g2) = loss_and_grad(&model, &[(&x, 1)], &sched, &tc, 7).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn empty_batch_rejected() {
        let cfg = tiny();
        let model: Denoiser<f32> =
            Denoiser::new(cfg, DenoiserParams::zeros(&cfg).unwrap()).unwrap();
        assert!(loss_and_grad(
            &model,
            &[],
            &NoiseSchedule::default(),
            &TrainConfig::default(),
            0
        )
        .is_err());
    }

    #[test]
    fn zero_steps_returns_initialization_and_training_is_deterministic() {
        let cfg = tiny();
        let data = generate(32, 16, 11).unwrap();
        let sched = NoiseSchedule::default();
        let tc = TrainConfig {
            steps: 0,
            batch_size: 4,
            seed: 3,
            ..Default::default()
        };
        let out = train(&data, &cfg, &tc, &sched, |_, _| Ok(())).unwrap();
        let init = DenoiserParams::<f32>::init(&cfg, &mut substream(3, "init", 0)).unwrap();
        assert_eq!(out.model.params(), &init);
        assert!(out.losses.is_empty());

        let tc = TrainConfig {
            steps: 5,
            checkpoint_every: 2,
            ..tc
        };
        let mut seen = Vec::new();
        let a = train(&data, &cfg, &tc, &sched, |s, _| {
            seen.push(s);
            Ok(())
        })
        .unwrap();
        let b = train(&data, &cfg, &tc, &sched, |_, _| Ok(())).unwrap();
        assert_eq!(seen, vec![2, 4]);
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.model.params(), b.model.params());
        assert_ne!(a.model.params(), &init);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            label_dropout_p: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
