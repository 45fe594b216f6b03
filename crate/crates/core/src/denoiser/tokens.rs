use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// `N × D_tok` matrix of flattened image patches.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid<T = f32>(Tensor<T>);

impl<T: Real> TokenGrid<T> {
    pub fn new(tokens: Tensor<T>) -> Result<Self> {
        tokens.dims2()?;
        Ok(TokenGrid(tokens))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn num_tokens(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn token_dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn token(&self, i: usize) -> &[T] {
        let d = self.token_dim();
        &self.0.data()[i * d..(i + 1) * d]
    }
}

/// Splits a `C×H×W` image into non-overlapping `p×p` patches in row-major
/// patch order. Each token is laid out `(row, col, channel)` with channel
/// fastest.
pub fn patchify<T: Real>(img: &Tensor<T>, p: usize) -> Result<TokenGrid<T>> {
    let (c, h, w) = img.dims3()?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::shape(
            "patchify",
            format!("{h}x{w} not divisible by patch {p}"),
        ));
    }
    let (gh, gw) = (h / p, w / p);
    let dim = p * p * c;
    let src = img.data();
    let mut out = vec![T::zero(); gh * gw * dim];
    for gy in 0..gh {
        for gx in 0..gw {
            let base = (gy * gw + gx) * dim;
            for py in 0..p {
                for px in 0..p {
                    for ch in 0..c {
                        out[base + (py * p + px) * c + ch] =
                            src[ch * h * w + (gy * p + py) * w + gx * p + px];
                    }
                }
            }
        }
    }
    Ok(TokenGrid(Tensor::from_parts(vec![gh * gw, dim], out)))
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(
    tokens: &TokenGrid<T>,
    p: usize,
    h: usize,
    w: usize,
    c: usize,
) -> Result<Tensor<T>> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(Error::shape(
            "unpatchify",
            format!("{h}x{w} not divisible by patch {p}"),
        ));
    }
    let (gh, gw) = (h / p, w / p);
    let dim = p * p * c;
    if tokens.num_tokens() != gh * gw || tokens.token_dim() != dim {
        return Err(Error::shape(
            "unpatchify",
            format!(
                "{}x{} tokens for a {c}x{h}x{w} image with patch {p}",
                tokens.num_tokens(),
                tokens.token_dim()
            ),
        ));
    }
    let src = tokens.0.data();
    let mut out = vec![T::zero(); c * h * w];
    for gy in 0..gh {
        for gx in 0..gw {
            let base = (gy * gw + gx) * dim;
            for py in 0..p {
                for px in 0..p {
                    for ch in 0..c {
                        out[ch * h * w + (gy * p + py) * w + gx * p + px] =
                            src[base + (py * p + px) * c + ch];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}
