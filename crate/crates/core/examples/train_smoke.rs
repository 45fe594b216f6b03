//! Trains a small denoiser on generated shapes and reports the loss drop.
//!
//! cargo run --release --example train_smoke -- [steps] [embed_dim] [depth] [batch]

use std::time::Instant;

use cartoondiff::dataset::generate;
use cartoondiff::training::{train, TrainConfig};
use cartoondiff::{ModelConfig, NoiseSchedule};

fn arg(i: usize, default: usize) -> usize {
    std::env::args()
        .nth(i)
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn main() -> cartoondiff::Result<()> {
    let steps = arg(1, 500);
    let model = ModelConfig {
        embed_dim: arg(2, 32),
        depth: arg(3, 2),
        heads: 2,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        steps,
        batch_size: arg(4, 16),
        ..TrainConfig::default()
    };
    let data = generate(4096, model.image_size, 0)?;
    let start = Instant::now();
    let out = train(
        &data,
        &model,
        &cfg,
        &NoiseSchedule::default(),
        |_, _| Ok(()),
    )?;
    let secs = start.elapsed().as_secs_f64();
    let w = (steps / 10).clamp(1, 100);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    println!(
        "{steps} steps in {secs:.1}s ({:.1} steps/s); first-{w} mean loss {:.4}, last-{w} mean loss {:.4}",
        steps as f64 / secs,
        mean(&out.losses[..w]),
        mean(&out.losses[steps - w..])
    );
    Ok(())
}
