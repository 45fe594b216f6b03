//! Shows what per-token L1 normalization does to a noise prediction.

use cartoondiff::denoiser::patchify;
use cartoondiff::rng::{gaussian, substream};
use cartoondiff::sampler::{token_normalize, DEFAULT_EPS_NORM};
use cartoondiff::Tensor;

fn main() -> cartoondiff::Result<()> {
    let eps: Tensor<f32> = gaussian(&[1, 8, 8], &mut substream(0, "demo", 0));
    let normed = token_normalize(&eps, 4, DEFAULT_EPS_NORM)?;
    let (before, after) = (patchify(&eps, 4)?, patchify(&normed, 4)?);
    for i in 0..before.num_tokens() {
        let l1 = |v: &[f32]| v.iter().map(|x| x.abs()).sum::<f32>();
        println!(
            "token {i}: L1 {:.3} -> {:.6}, first entries {:+.3} {:+.3} -> {:+.4} {:+.4}",
            l1(before.token(i)),
            l1(after.token(i)),
            before.token(i)[0],
            before.token(i)[1],
            after.token(i)[0],
            after.token(i)[1],
        );
    }
    println!(
        "overall scale: {:.3} -> {:.3} (max |ε|)",
        eps.max_abs(),
        normed.max_abs()
    );
    Ok(())
}
