//! Saves a freshly initialized model and prints its tensor inventory
//! through the command-line front end.

use cartoondiff::denoiser::save_checkpoint;
use cartoondiff::rng::substream;
use cartoondiff::{Denoiser, DenoiserParams, ModelConfig};

fn main() -> cartoondiff::Result<()> {
    let cfg = ModelConfig::default();
    let model = Denoiser::new(
        cfg,
        DenoiserParams::init(&cfg, &mut substream(0, "init", 0))?,
    )?;
    let path = std::env::temp_dir().join("inspect_demo.cdif");
    save_checkpoint(&model, &path)?;
    let code = cartoondiff::cli::run(["cartoondiff", "inspect", path.to_str().unwrap()]);
    std::process::exit(code);
}
