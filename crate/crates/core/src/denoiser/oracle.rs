//! Exact noise prediction for Gaussian-mixture data.
//!
//! If X₀ is a mixture of isotropic Gaussians, the posterior mean
//! E[X₀ | x_t] has a closed form, and so does the ideal ε prediction
//! `(x_t − √ᾱ_t·E[X₀|x_t]) / √(1−ᾱ_t)`. This gives the sampler a
//! reference denoiser with no training involved.

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Tensor<f64>,
    /// Isotropic per-element variance; 0 is a point mass.
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixtureOracle {
    components: Vec<MixtureComponent>,
}

impl GaussianMixtureOracle {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("mixture needs at least one component"))?;
        let shape = first.mean.shape().to_vec();
        for c in &components {
            if !(c.weight > 0.0) {
                return Err(Error::invalid(format!(
                    "mixture weight {} not positive",
                    c.weight
                )));
            }
            if !(c.variance >= 0.0) {
                return Err(Error::invalid(format!(
                    "mixture variance {} negative",
                    c.variance
                )));
            }
            if c.mean.shape() != &shape[..] {
                return Err(Error::shape(
                    "GaussianMixtureOracle",
                    "component means differ in shape",
                ));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        Ok(GaussianMixtureOracle { components })
    }

    /// A single point mass at `mean`.
    pub fn point_mass(mean: Tensor<f64>) -> Self {
        GaussianMixtureOracle {
            components: vec![MixtureComponent {
                weight: 1.0,
                mean,
                variance: 0.0,
            }],
        }
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn shape(&self) -> &[usize] {
        self.components[0].mean.shape()
    }

    /// Posterior responsibilities of each component given `x_t` at noise
    /// level `alpha_bar`.
    pub fn responsibilities(&self, x_t: &Tensor<f64>, alpha_bar: f64) -> Result<Vec<f64>> {
        let sa = alpha_bar.sqrt();
        let dim = x_t.numel() as f64;
        let logs = self
            .components
            .iter()
            .map(|c| {
                let var = alpha_bar * c.variance + (1.0 - alpha_bar);
                let dist = x_t.zip_map(&c.mean, "oracle", |x, m| x - sa * m)?.sum_sq();
                Ok(c.weight.ln() - 0.5 * dim * var.ln() - dist / (2.0 * var))
            })
            .collect::<Result<Vec<f64>>>()?;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.iter().map(|e| e / total).collect())
    }

    /// E[X₀ | x_t] at noise level `alpha_bar`.
    pub fn posterior_mean(&self, x_t: &Tensor<f64>, alpha_bar: f64) -> Result<Tensor<f64>> {
        let sa = alpha_bar.sqrt();
        let resp = self.responsibilities(x_t, alpha_bar)?;
        let mut acc = Tensor::zeros(x_t.shape());
        for (c, r) in self.components.iter().zip(resp) {
            let var = alpha_bar * c.variance + (1.0 - alpha_bar);
            let gain = sa * c.variance / var;
            let cond_mean = x_t.zip_map(&c.mean, "oracle", |x, m| m + gain * (x - sa * m))?;
            acc.add_assign(&cond_mean.scale(r)?)?;
        }
        Ok(acc)
    }

    /// Exact ε prediction for `x_t` at step `t ≥ 1`.
    pub fn oracle_eps<T: Real>(
        &self,
        x_t: &Tensor<T>,
        t: usize,
        sched: &NoiseSchedule,
    ) -> Result<Tensor<T>> {
        if t == 0 {
            return Err(Error::invalid("oracle noise is undefined at t = 0"));
        }
        let ab = sched.alpha_bar(t)?;
        let x = x_t.cast::<f64>()?;
        let mean = self.posterior_mean(&x, ab)?;
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        x.zip_map(&mean, "oracle_eps", |x, m| (x - sa * m) / sn)?
            .cast()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian, substream};
    use rand::Rng;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1, 1, 1], vec![v]).unwrap()
    }

    #[test]
    fn point_mass_gives_closed_form() {
        let sched = NoiseSchedule::default();
        let mu: Tensor<f64> = gaussian(&[1, 4, 4], &mut substream(1, "mu", 0));
        let x: Tensor<f64> = gaussian(&[1, 4, 4], &mut substream(1, "x", 0));
        let o = GaussianMixtureOracle::point_mass(mu.clone());
        let t = 321;
        let ab = sched.alpha_bar(t).unwrap();
        let eps = o.oracle_eps(&x, t, &sched).unwrap();
        let expect = x
            .zip_map(&mu, "e", |x, m| (x - ab.sqrt() * m) / (1.0 - ab).sqrt())
            .unwrap();
        assert!(eps.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let sched = NoiseSchedule::default();
        let comps = [0.6, -0.6]
            .iter()
            .map(|&m| MixtureComponent {
                weight: 0.5,
                mean: Tensor::full(&[1, 2, 2], m).unwrap(),
                variance: 0.1,
            })
            .collect();
        let o = GaussianMixtureOracle::new(comps).unwrap();
        let x = Tensor::zeros(&[1, 2, 2]);
        let m = o.posterior_mean(&x, sched.alpha_bar(100).unwrap()).unwrap();
        assert!(m.max_abs() < 1e-15);
        assert!(o.oracle_eps(&x, 100, &sched).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn t_zero_rejected() {
        let o = GaussianMixtureOracle::point_mass(scalar(0.0));
        assert!(o
            .oracle_eps(&scalar(0.0), 0, &NoiseSchedule::default())
            .is_err());
    }

    #[test]
    fn invalid_mixtures_rejected() {
        let c = |w: f64, v: f64| MixtureComponent {
            weight: w,
            mean: scalar(0.0),
            variance: v,
        };
        assert!(GaussianMixtureOracle::new(vec![]).is_err());
        assert!(GaussianMixtureOracle::new(vec![c(0.5, 0.1)]).is_err());
        assert!(GaussianMixtureOracle::new(vec![c(1.0, -0.1)]).is_err());
        assert!(GaussianMixtureOracle::new(vec![c(1.5, 0.1), c(-0.5, 0.1)]).is_err());
    }

    fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
        (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    /// Posterior mean by trapezoidal integration over x₀ on a dense grid.
    fn quadrature_posterior_mean(comps: &[(f64, f64, f64)], x_t: f64, ab: f64) -> f64 {
        let (lo, hi, n) = (-8.0, 8.0, 400_000);
        let h = (hi - lo) / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let x0 = lo + i as f64 * h;
            let prior: f64 = comps
                .iter()
                .map(|&(w, m, v)| w * normal_pdf(x0, m, v))
                .sum();
            let f = prior * normal_pdf(x_t, ab.sqrt() * x0, 1.0 - ab);
            let wgt = if i == 0 || i == n { 0.5 } else { 1.0 };
            num += wgt * x0 * f;
            den += wgt * f;
        }
        num / den
    }

    #[test]
    fn two_components_match_quadrature() {
        let sched = NoiseSchedule::default();
        let spec = [(0.3, -0.8, 0.05), (0.7, 0.5, 0.2)];
        let o = GaussianMixtureOracle::new(
            spec.iter()
                .map(|&(w, m, v)| MixtureComponent {
                    weight: w,
                    mean: scalar(m),
                    variance: v,
                })
                .collect(),
        )
        .unwrap();
        let mut rng = substream(3, "quad", 0);
        for _ in 0..5 {
            let t = rng.gen_range(1..=1000);
            let x_t = rng.gen_range(-2.0..2.0);
            let ab = sched.alpha_bar(t).unwrap();
            let closed = o.posterior_mean(&scalar(x_t), ab).unwrap().data()[0];
            let quad = quadrature_posterior_mean(&spec, x_t, ab);
            assert!(
                (closed - quad).abs() < 1e-6,
                "t={t} x={x_t}: {closed} vs {quad}"
            );

            let eps = o.oracle_eps(&scalar(x_t), t, &sched).unwrap().data()[0];
            let eps_quad = (x_t - ab.sqrt() * quad) / (1.0 - ab).sqrt();
            assert!((eps - eps_quad).abs() < 1e-6 / (1.0 - ab).sqrt());
        }
    }
}
