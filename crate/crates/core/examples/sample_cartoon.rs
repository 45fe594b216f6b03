//! Plain and cartoonized samples from one seed, side by side.
//!
//! cargo run --release --example sample_cartoon -- [checkpoint.cdif]

use cartoondiff::dataset::generate;
use cartoondiff::denoiser::load_checkpoint;
use cartoondiff::pnm::{clamp_for_display, contact_sheet, write_image};
use cartoondiff::sampler::{run_rng, sample};
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
    let sched = NoiseSchedule::default();
    let mut rows = Vec::new();
    for sigma in [0, 250] {
        let mut row = Vec::new();
        for class in 0..model.config().num_classes {
            let cfg = SamplerConfig {
                sigma,
                class,
                ..SamplerConfig::default()
            };
            row.push(clamp_for_display(
                &sample(&model, &sched, &cfg, &mut run_rng(11, class as u64))?.image,
            ));
        }
        rows.push(row);
    }
    write_image(&contact_sheet(&rows, 2, 1.0)?, "cartoon_pairs.pgm")?;
    println!("wrote cartoon_pairs.pgm (top row σ = 0, bottom row σ = 250)");
    Ok(())
}
