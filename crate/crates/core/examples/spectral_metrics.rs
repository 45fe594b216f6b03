//! Band energies and total variation of a few synthetic images.

use cartoondiff::analysis::{default_cutoff, low_band_correlation, SpectralReport};
use cartoondiff::rng::{gaussian, substream};
use cartoondiff::Tensor;

fn main() -> cartoondiff::Result<()> {
    let n = 32;
    let rho = default_cutoff(n);
    let smooth = Tensor::from_fn(&[1, n, n], |i| {
        ((i % n) as f32 / n as f32 * std::f32::consts::TAU).sin() * 0.8
    })?;
    let noise: Tensor<f32> = gaussian(&[1, n, n], &mut substream(0, "demo", 0));
    let noisy = smooth.add(&noise.scale(0.2)?)?;
    let checker = Tensor::from_fn(&[1, n, n], |i| {
        if (i / n + i % n) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    })?;
    println!("cutoff ρ = {rho}");
    for (name, img) in [
        ("smooth", &smooth),
        ("smooth+noise", &noisy),
        ("checkerboard", &checker),
    ] {
        let r = SpectralReport::of(img, rho)?;
        println!(
            "{name:>13}: total {:8.2}  low {:8.2}  high {:8.2}  TV {:.3}",
            r.total, r.low, r.high, r.total_variation
        );
    }
    println!(
        "low-band correlation smooth vs noisy: {:.4}",
        low_band_correlation(&smooth, &noisy, rho)?
    );
    Ok(())
}
