//! Sweeps σ with paired seeds and writes ablation.csv plus a contact sheet.
//!
//! cargo run --release --example sigma_ablation -- [checkpoint.cdif]

use cartoondiff::analysis::{ablate_sigma, default_cutoff, DEFAULT_ABLATION_SIGMAS};
use cartoondiff::dataset::generate;
use cartoondiff::denoiser::load_checkpoint;
use cartoondiff::training::{train, TrainConfig};
use cartoondiff::{Denoiser, ModelConfig, NoiseSchedule, SamplerConfig};

fn load_or_train() -> cartoondiff::Result<Denoiser<f32>> {
    if let Some(path) = std::env::args().nth(1) {
        return load_checkpoint(path);
    }
    println!("no checkpoint given; training a small model for 400 steps");
    let model = ModelConfig {
        embed_dim: 32,
        depth: 2,
        heads: 2,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        steps: 400,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let data = generate(1024, model.image_size, 0)?;
    Ok(train(
        &data,
        &model,
        &cfg,
        &NoiseSchedule::default(),
        |_, _| Ok(()),
    )?
    .model)
}

fn main() -> cartoondiff::Result<()> {
    let model = load_or_train()?;
    let nc = model.config().num_classes;
    let rho = default_cutoff(model.config().image_size);
    let table = ablate_sigma(
        &model,
        &NoiseSchedule::default(),
        &SamplerConfig::default(),
        &DEFAULT_ABLATION_SIGMAS,
        16,
        rho,
        |i| i % nc,
    )?;
    for r in &table.rows {
        println!(
            "σ={:<4}{} high-band {:.3} ± {:.3}, TV {:.3}",
            r.sigma,
            if r.is_default { "*" } else { " " },
            r.high.mean,
            r.high.std,
            r.total_variation.mean
        );
    }
    table.write("ablation_out", 8)?;
    println!("wrote ablation_out/");
    Ok(())
}
