//! Samples with the exact denoiser of a two-component Gaussian mixture,
//! with and without token normalization. No training involved.

use cartoondiff::denoiser::{GaussianMixtureOracle, MixtureComponent, OraclePredictor};
use cartoondiff::sampler::{run_rng, sample};
use cartoondiff::{NoiseSchedule, SamplerConfig, Tensor};

fn main() -> cartoondiff::Result<()> {
    let sched = NoiseSchedule::default();
    let stripes = Tensor::from_fn(&[1, 8, 8], |i| if (i / 8) % 2 == 0 { 0.6 } else { -0.6 })?;
    let flat = Tensor::full(&[1, 8, 8], 0.2)?;
    let oracle = GaussianMixtureOracle::new(vec![
        MixtureComponent {
            weight: 0.5,
            mean: stripes.clone(),
            variance: 0.01,
        },
        MixtureComponent {
            weight: 0.5,
            mean: flat.clone(),
            variance: 0.01,
        },
    ])?;
    let model = OraclePredictor {
        oracle,
        schedule: sched.clone(),
        patch_size: 4,
    };
    for sigma in [0, 250] {
        let cfg = SamplerConfig {
            sigma,
            ..SamplerConfig::default()
        };
        for seed in 0..4 {
            let x = sample(&model, &sched, &cfg, &mut run_rng(seed, 0))?.image;
            let d_stripes = x.max_abs_diff(&stripes.cast()?)?;
            let d_flat = x.max_abs_diff(&flat.cast()?)?;
            println!("σ={sigma:<3} seed {seed}: L∞ to stripes {d_stripes:.3}, to flat {d_flat:.3}");
        }
    }
    Ok(())
}
