//! Direct 2-D DFT and radial band energies.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    fn norm_sq(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

fn twiddles(n: usize) -> Vec<Complex> {
    (0..n)
        .map(|k| {
            let a = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
            Complex {
                re: a.cos(),
                im: a.sin(),
            }
        })
        .collect()
}

/// Unnormalized DFT of one `h × w` channel, row-major by `(ky, kx)`.
pub fn dft2(channel: &[f64], h: usize, w: usize) -> Vec<Complex> {
    let (tw_w, tw_h) = (twiddles(w), twiddles(h));
    let mut rows = vec![Complex::default(); h * w];
    for y in 0..h {
        let src = &channel[y * w..(y + 1) * w];
        for kx in 0..w {
            let mut acc = Complex::default();
            for (x, &v) in src.iter().enumerate() {
                let t = tw_w[(kx * x) % w];
                acc.re += v * t.re;
                acc.im += v * t.im;
            }
            rows[y * w + kx] = acc;
        }
    }
    let mut out = vec![Complex::default(); h * w];
    for kx in 0..w {
        for ky in 0..h {
            let mut acc = Complex::default();
            for y in 0..h {
                let v = rows[y * w + kx];
                let t = tw_h[(ky * y) % h];
                acc.re += v.re * t.re - v.im * t.im;
                acc.im += v.re * t.im + v.im * t.re;
            }
            out[ky * w + kx] = acc;
        }
    }
    out
}

fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Radial frequency of DFT bin `(ky, kx)` in cycles per image.
pub fn radial_frequency(ky: usize, kx: usize, h: usize, w: usize) -> f64 {
    signed_freq(ky, h).hypot(signed_freq(kx, w))
}

/// Largest cutoff for which the high band is non-empty.
pub fn nyquist(h: usize, w: usize) -> f64 {
    h.min(w) as f64 / 2.0
}

/// Default band split: a quarter of the image side.
pub fn default_cutoff(h: usize) -> f64 {
    h as f64 / 4.0
}

/// Spectral energy of an image split at radial cutoff `rho`. All values
/// are `Σ|X|² / (H·W)`, so `total` equals the sum of squared pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BandEnergies {
    pub total: f64,
    /// Bins with radius ≤ `rho`, including DC.
    pub low: f64,
    pub high: f64,
}

fn check_cutoff(rho: f64, h: usize, w: usize) -> Result<()> {
    if !(rho > 0.0 && rho < nyquist(h, w)) {
        return Err(Error::invalid(format!(
            "cutoff {rho} outside (0, {})",
            nyquist(h, w)
        )));
    }
    Ok(())
}

fn channels_f64(img: &Tensor<f32>) -> Result<(usize, usize, usize, Vec<f64>)> {
    let (c, h, w) = img.dims3()?;
    Ok((c, h, w, img.data().iter().map(|&v| v as f64).collect()))
}

pub fn band_energies(img: &Tensor<f32>, rho: f64) -> Result<BandEnergies> {
    let (c, h, w, data) = channels_f64(img)?;
    check_cutoff(rho, h, w)?;
    let norm = (h * w) as f64;
    let mut e = BandEnergies::default();
    for ch in 0..c {
        let spec = dft2(&data[ch * h * w..(ch + 1) * h * w], h, w);
        for ky in 0..h {
            for kx in 0..w {
                let p = spec[ky * w + kx].norm_sq() / norm;
                e.total += p;
                if radial_frequency(ky, kx, h, w) > rho {
                    e.high += p;
                } else {
                    e.low += p;
                }
            }
        }
    }
    Ok(e)
}

/// Energy above the radial cutoff `rho`, normalized by pixel count.
pub fn high_freq_energy(img: &Tensor<f32>, rho: f64) -> Result<f64> {
    Ok(band_energies(img, rho)?.high)
}

/// Mean absolute difference between horizontal and vertical neighbours,
/// summed over both directions and divided by the number of pixels.
pub fn total_variation(img: &Tensor<f32>) -> Result<f64> {
    let (c, h, w, d) = channels_f64(img)?;
    let mut acc = 0.0;
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let v = d[base + y * w + x];
                if x + 1 < w {
                    acc += (d[base + y * w + x + 1] - v).abs();
                }
                if y + 1 < h {
                    acc += (d[base + (y + 1) * w + x] - v).abs();
                }
            }
        }
    }
    Ok(acc / (c * h * w) as f64)
}

/// Pearson correlation between the low-pass-filtered versions of two
/// images, computed from their DFT bins with `0 < radius ≤ rho`. Returns 0
/// if either low band carries no energy.
pub fn low_band_correlation(a: &Tensor<f32>, b: &Tensor<f32>, rho: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "low_band_correlation",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (c, h, w, da) = channels_f64(a)?;
    let (_, _, _, db) = channels_f64(b)?;
    check_cutoff(rho, h, w)?;
    let (mut cross, mut ea, mut eb) = (0.0, 0.0, 0.0);
    for ch in 0..c {
        let sa = dft2(&da[ch * h * w..(ch + 1) * h * w], h, w);
        let sb = dft2(&db[ch * h * w..(ch + 1) * h * w], h, w);
        for ky in 0..h {
            for kx in 0..w {
                let r = radial_frequency(ky, kx, h, w);
                if r == 0.0 || r > rho {
                    continue;
                }
                let (x, y) = (sa[ky * w + kx], sb[ky * w + kx]);
                cross += x.re * y.re + x.im * y.im;
                ea += x.norm_sq();
                eb += y.norm_sq();
            }
        }
    }
    if ea <= 0.0 || eb <= 0.0 {
        return Ok(0.0);
    }
    Ok(cross / (ea * eb).sqrt())
}
