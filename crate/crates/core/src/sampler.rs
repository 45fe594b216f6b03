//! Reverse process: classifier-free guidance, per-token L1 normalization of
//! the guided noise below the onset step σ, and the deterministic update
//!
//! ```text
//! X̂₀     = (X_t − √(1−ᾱ_t)·ε_t) / √ᾱ_t
//! X_prev = √ᾱ_prev·X̂₀ + √(1−ᾱ_prev)·ε_t
//! ```

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{patchify, unpatchify, Condition, NoisePredictor, TokenGrid};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{gaussian, substream};
use crate::schedule::NoiseSchedule;

pub const DEFAULT_LAMBDA: f64 = 4.0;
pub const DEFAULT_SIGMA: usize = 250;
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_EPS_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Guidance scale λ.
    pub lambda: f64,
    /// Normalization is applied at every step `t < sigma`.
    pub sigma: usize,
    pub class: usize,
    /// Number of equidistant steps `K`.
    pub steps: usize,
    pub seed: u64,
    /// Adds DDPM posterior noise to each update (off by default).
    pub stochastic: bool,
    /// Lower bound on the token L1 norm in the normalization.
    pub eps_norm: f64,
    /// Steps at which to record `(t, X_t, X̂₀)`; `0` records the final image.
    pub snapshot_steps: Vec<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            lambda: DEFAULT_LAMBDA,
            sigma: DEFAULT_SIGMA,
            class: 0,
            steps: DEFAULT_STEPS,
            seed: 0,
            stochastic: false,
            eps_norm: DEFAULT_EPS_NORM,
            snapshot_steps: Vec::new(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "guidance scale {} must be >= 0",
                self.lambda
            )));
        }
        if self.sigma > sched.timesteps() {
            return Err(Error::invalid(format!(
                "sigma {} exceeds T = {}",
                self.sigma,
                sched.timesteps()
            )));
        }
        if self.steps == 0 || self.steps > sched.timesteps() {
            return Err(Error::invalid(format!(
                "step count {} outside 1..={}",
                self.steps,
                sched.timesteps()
            )));
        }
        if !(self.eps_norm > 0.0) {
            return Err(Error::invalid("eps_norm must be positive"));
        }
        Ok(())
    }
}

/// `ε_∅ + λ(ε_c − ε_∅)`. At λ = 1 the conditional prediction is returned
/// as is, so both endpoints are exact.
pub fn cfg_combine(
    eps_uncond: &Tensor<f32>,
    eps_cond: &Tensor<f32>,
    lambda: f64,
) -> Result<Tensor<f32>> {
    if eps_uncond.shape() != eps_cond.shape() {
        return Err(Error::shape(
            "cfg_combine",
            format!("{:?} vs {:?}", eps_uncond.shape(), eps_cond.shape()),
        ));
    }
    if lambda == 1.0 {
        return Ok(eps_cond.clone());
    }
    let l = lambda as f32;
    eps_uncond.zip_map(eps_cond, "cfg_combine", |u, c| u + l * (c - u))
}

/// Divides every token by `max(‖token‖₁, eps_norm)`.
pub fn normalize_tokens(tokens: &TokenGrid<f32>, eps_norm: f64) -> Result<TokenGrid<f32>> {
    if !(eps_norm > 0.0) {
        return Err(Error::invalid("eps_norm must be positive"));
    }
    let d = tokens.token_dim();
    let mut out = Vec::with_capacity(tokens.num_tokens() * d);
    for i in 0..tokens.num_tokens() {
        let tok = tokens.token(i);
        let l1: f64 = tok.iter().map(|&v| (v as f64).abs()).sum();
        let denom = l1.max(eps_norm);
        out.extend(tok.iter().map(|&v| (v as f64 / denom) as f32));
    }
    TokenGrid::new(Tensor::new(vec![tokens.num_tokens(), d], out)?)
}

/// Per-token L1 normalization of an image-shaped noise tensor, using
/// `p×p` patches as tokens.
pub fn token_normalize(eps: &Tensor<f32>, p: usize, eps_norm: f64) -> Result<Tensor<f32>> {
    let (c, h, w) = eps.dims3()?;
    let tokens = normalize_tokens(&patchify(eps, p)?, eps_norm)?;
    unpatchify(&tokens, p, h, w, c)
}

/// Guided noise at step `t`, normalized when `t < sigma`.
pub fn predict_noise_guided_perturbed<M: NoisePredictor + ?Sized>(
    model: &M,
    x_t: &Tensor<f32>,
    t: usize,
    cfg: &SamplerConfig,
) -> Result<Tensor<f32>> {
    let eps_u = model.predict_noise(x_t, t, Condition::Null)?;
    let eps_c = model.predict_noise(x_t, t, Condition::Class(cfg.class))?;
    let guided = cfg_combine(&eps_u, &eps_c, cfg.lambda)?;
    if t < cfg.sigma {
        token_normalize(&guided, model.patch_size(), cfg.eps_norm)
    } else {
        Ok(guided)
    }
}

/// Result of one reverse transition.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseStep {
    pub x_prev: Tensor<f32>,
    /// Predicted clean image X̂₀ implied by `(x_t, ε_t)`.
    pub x0_pred: Tensor<f32>,
}

/// Deterministic update from step `t` to `t_prev` with ᾱ values taken
/// directly, so skipped steps use ᾱ_{t_prev}.
pub fn ddim_update(
    x_t: &Tensor<f32>,
    eps_t: &Tensor<f32>,
    alpha_bar_t: f64,
    alpha_bar_prev: f64,
) -> Result<DenoiseStep> {
    if !(alpha_bar_t > 0.0) {
        return Err(Error::invalid("alpha_bar_t must be positive"));
    }
    let (sa, sn) = (alpha_bar_t.sqrt(), (1.0 - alpha_bar_t).sqrt());
    let (sp, snp) = (alpha_bar_prev.sqrt(), (1.0 - alpha_bar_prev).sqrt());
    let x0_pred = x_t.zip_map(eps_t, "denoise_step", |x, e| {
        ((x as f64 - sn * e as f64) / sa) as f32
    })?;
    let x_prev = x_t.zip_map(eps_t, "denoise_step", |x, e| {
        let x0 = (x as f64 - sn * e as f64) / sa;
        (sp * x0 + snp * e as f64) as f32
    })?;
    Ok(DenoiseStep { x_prev, x0_pred })
}

pub fn denoise_step(
    x_t: &Tensor<f32>,
    eps_t: &Tensor<f32>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<DenoiseStep> {
    if t <= t_prev {
        return Err(Error::invalid(format!(
            "step {t} must exceed previous step {t_prev}"
        )));
    }
    ddim_update(x_t, eps_t, sched.alpha_bar(t)?, sched.alpha_bar(t_prev)?)
}

/// Stochastic variant: the η = 1 update, whose marginals match ancestral
/// DDPM sampling. `noise` is a fresh unit Gaussian draw.
pub fn denoise_step_stochastic(
    x_t: &Tensor<f32>,
    eps_t: &Tensor<f32>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    noise: &Tensor<f32>,
) -> Result<DenoiseStep> {
    if t <= t_prev {
        return Err(Error::invalid(format!(
            "step {t} must exceed previous step {t_prev}"
        )));
    }
    let (ab, abp) = (sched.alpha_bar(t)?, sched.alpha_bar(t_prev)?);
    let var = (1.0 - abp) / (1.0 - ab) * (1.0 - ab / abp);
    let dir = (1.0 - abp - var).max(0.0).sqrt();
    let (sa, sn, sp, sd) = (ab.sqrt(), (1.0 - ab).sqrt(), abp.sqrt(), var.sqrt());
    let x0_pred = x_t.zip_map(eps_t, "denoise_step", |x, e| {
        ((x as f64 - sn * e as f64) / sa) as f32
    })?;
    let mean = x0_pred.zip_map(eps_t, "denoise_step", |x0, e| {
        (sp * x0 as f64 + dir * e as f64) as f32
    })?;
    let x_prev = mean.zip_map(noise, "denoise_step", |m, z| {
        (m as f64 + sd * z as f64) as f32
    })?;
    Ok(DenoiseStep { x_prev, x0_pred })
}

/// Intermediate state recorded during sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub x_t: Tensor<f32>,
    pub x0_pred: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub image: Tensor<f32>,
    pub snapshots: Vec<Snapshot>,
}

/// Runs the full reverse process from `X_T ~ N(0, I)` drawn from `rng`.
pub fn sample<M: NoisePredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<SampleOutput> {
    cfg.validate(sched)?;
    let pairs = sched.equidistant_subsequence(cfg.steps)?;
    for &s in &cfg.snapshot_steps {
        if s != 0 && !pairs.iter().any(|p| p.t == s) {
            return Err(Error::invalid(format!(
                "snapshot step {s} is not visited by the sampler"
            )));
        }
    }
    let mut x: Tensor<f32> = gaussian(&model.image_shape(), rng);
    let mut snapshots = Vec::new();
    for pair in pairs {
        let eps = predict_noise_guided_perturbed(model, &x, pair.t, cfg)?;
        let step = if cfg.stochastic && pair.t_prev > 0 {
            let z = gaussian(&model.image_shape(), rng);
            denoise_step_stochastic(&x, &eps, pair.t, pair.t_prev, sched, &z)?
        } else {
            denoise_step(&x, &eps, pair.t, pair.t_prev, sched)?
        };
        if cfg.snapshot_steps.contains(&pair.t) {
            snapshots.push(Snapshot {
                t: pair.t,
                x_t: x,
                x0_pred: step.x0_pred,
            });
        }
        x = step.x_prev;
    }
    if cfg.snapshot_steps.contains(&0) {
        snapshots.push(Snapshot {
            t: 0,
            x_t: x.clone(),
            x0_pred: x.clone(),
        });
    }
    Ok(SampleOutput {
        image: x,
        snapshots,
    })
}

/// RNG for the `run`-th sample drawn under `seed`.
pub fn run_rng(seed: u64, run: u64) -> crate::rng::StreamRng {
    substream(seed, "sample", run)
}

/// `count` independent runs in parallel; run `i` uses [`run_rng`]`(cfg.seed, i)`
/// and `class_of(i)` as its class.
pub fn sample_many<M: NoisePredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    count: usize,
    class_of: impl Fn(usize) -> usize + Sync,
) -> Result<Vec<SampleOutput>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let run_cfg = SamplerConfig {
                class: class_of(i),
                ..cfg.clone()
            };
            sample(model, sched, &run_cfg, &mut run_rng(cfg.seed, i as u64))
        })
        .collect()
}
