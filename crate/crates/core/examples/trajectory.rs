//! Spectral metrics of the predicted clean image along the sampling path.
//!
//! cargo run --release --example trajectory -- [checkpoint.cdif]

use cartoondiff::analysis::{default_cutoff, trajectory_report, DEFAULT_SNAPSHOTS};
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
    let cfg = SamplerConfig {
        sigma: 0,
        ..SamplerConfig::default()
    };
    let rho = default_cutoff(model.config().image_size);
    let rep = trajectory_report(
        &model,
        &NoiseSchedule::default(),
        &cfg,
        &DEFAULT_SNAPSHOTS,
        8,
        rho,
    )?;
    print!("{}", rep.to_csv());
    if let Some((a, b)) = rep.peak_detail_growth() {
        println!("detail energy grows fastest between t={a} and t={b}");
    }
    Ok(())
}
