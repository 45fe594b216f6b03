//! Noise schedule and the forward (noising) process.

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// β, α and ᾱ tables for a `T`-step diffusion. Index 0 of `alpha_bars`
/// is the clean state (ᾱ₀ = 1); `betas[t - 1]` is β_t.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// One transition of the reverse process, from `t` down to `t_prev`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepPair {
    pub t: usize,
    pub t_prev: usize,
}

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}

impl NoiseSchedule {
    /// β linearly interpolated from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::invalid(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::invalid("alpha_bar underflowed to zero"));
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// ᾱ_t for t = 0..=T.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or_else(|| Error::invalid(format!("step {t} outside 0..={}", self.timesteps())))
    }

    /// Forward process: `√ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
    pub fn q_sample<T: Real>(
        &self,
        x0: &Tensor<T>,
        t: usize,
        eps: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let ab = self.alpha_bar(t)?;
        let (sa, sn) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
        x0.zip_map(eps, "q_sample", |x, e| sa * x + sn * e)
    }

    /// `K` equally spaced steps from `T` down, each paired with the step it
    /// transitions to; the last transition lands on step 0.
    pub fn equidistant_subsequence(&self, k: usize) -> Result<Vec<StepPair>> {
        let t_total = self.timesteps();
        if k == 0 || k > t_total {
            return Err(Error::invalid(format!(
                "step count {k} outside 1..={t_total}"
            )));
        }
        // round-half-up of T·(K−i)/K
        let steps: Vec<usize> = (0..k)
            .map(|i| (2 * t_total * (k - i) + k) / (2 * k))
            .collect();
        Ok(steps
            .iter()
            .enumerate()
            .map(|(i, &t)| StepPair {
                t,
                t_prev: steps.get(i + 1).copied().unwrap_or(0),
            })
            .collect())
    }
}
