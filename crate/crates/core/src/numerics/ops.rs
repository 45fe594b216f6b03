//! Matrix kernels and their hand-written backward passes.
//!
//! All reductions run in a fixed left-to-right order so every kernel is
//! bit-reproducible for a given input.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

fn finish<T: Real>(shape: Vec<usize>, data: Vec<T>, op: &'static str) -> Result<Tensor<T>> {
    let t = Tensor::from_parts(shape, data);
    t.check_finite(op)?;
    Ok(t)
}

/// `a[M×K] · b[K×N]`. Each output element accumulates over `K` in index
/// order, so the result equals the textbook triple loop bit for bit.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in ad[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    finish(vec![m, n], out, "matmul")
}

pub fn transpose<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = a.dims2()?;
    let d = a.data();
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

/// `a · bᵀ` for `a[M×K]`, `b[N×K]`.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul(a, &transpose(b)?)
}

/// `aᵀ · b` for `a[K×M]`, `b[K×N]`.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(
            "matmul_tn",
            format!("[{k}x{m}]^T x [{k2}x{n}]"),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for kk in 0..k {
        let brow = &bd[kk * n..(kk + 1) * n];
        for (i, &aki) in ad[kk * m..(kk + 1) * m].iter().enumerate() {
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aki * bv;
            }
        }
    }
    finish(vec![m, n], out, "matmul_tn")
}

/// Adds a length-`D` vector to every row of `x[N×D]`.
pub fn add_row_vector<T: Real>(x: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = x.dims2()?;
    if v.numel() != d {
        return Err(Error::shape(
            "add_row_vector",
            format!("[{n}x{d}] + [{}]", v.numel()),
        ));
    }
    let vd = v.data();
    let data = x
        .data()
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(vd).map(|(&a, &b)| a + b))
        .collect();
    finish(vec![n, d], data, "add_row_vector")
}

/// Multiplies every row of `x[N×D]` elementwise by a length-`D` vector.
pub fn mul_row_vector<T: Real>(x: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = x.dims2()?;
    if v.numel() != d {
        return Err(Error::shape(
            "mul_row_vector",
            format!("[{n}x{d}] * [{}]", v.numel()),
        ));
    }
    let vd = v.data();
    let data = x
        .data()
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(vd).map(|(&a, &b)| a * b))
        .collect();
    finish(vec![n, d], data, "mul_row_vector")
}

/// Column sums of `x[N×D]` as a `[D]` tensor, rows accumulated in order.
pub fn column_sums<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, d) = x.dims2()?;
    let mut out = vec![T::zero(); d];
    for row in x.data().chunks_exact(d) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    finish(vec![d], out, "column_sums")
}

/// Per-row standardization without affine parameters. Returns the
/// normalized rows and the per-row inverse standard deviation, which the
/// backward pass needs.
pub fn standardize_rows<T: Real>(x: &Tensor<T>, eps: T) -> Result<(Tensor<T>, Vec<T>)> {
    if !(eps > T::zero()) {
        return Err(Error::invalid("layer norm eps must be positive"));
    }
    let (n, d) = x.dims2()?;
    let inv_d = T::one() / T::lit(d as f64);
    let mut out = Vec::with_capacity(n * d);
    let mut inv_stds = Vec::with_capacity(n);
    for row in x.data().chunks_exact(d) {
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
        let var = row
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            * inv_d;
        let inv_std = T::one() / (var + eps).sqrt();
        out.extend(row.iter().map(|&v| (v - mean) * inv_std));
        inv_stds.push(inv_std);
    }
    Ok((finish(vec![n, d], out, "layer_norm")?, inv_stds))
}

/// Layer normalization of each row, then `gamma ⊙ x̂ + beta`.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let (_, d) = x.dims2()?;
    if gamma.numel() != d || beta.numel() != d {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "row width {d}, gamma {}, beta {}",
                gamma.numel(),
                beta.numel()
            ),
        ));
    }
    let (xhat, _) = standardize_rows(x, eps)?;
    add_row_vector(&mul_row_vector(&xhat, gamma)?, beta)
}

/// Gradient of [`standardize_rows`] with respect to its input, given the
/// normalized output `xhat`, the cached inverse standard deviations, and
/// the upstream gradient.
pub fn standardize_rows_backward<T: Real>(
    xhat: &Tensor<T>,
    inv_stds: &[T],
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, d) = xhat.dims2()?;
    if grad.shape() != xhat.shape() || inv_stds.len() != n {
        return Err(Error::shape(
            "layer_norm_backward",
            format!("{:?}", grad.shape()),
        ));
    }
    let inv_d = T::one() / T::lit(d as f64);
    let mut out = Vec::with_capacity(n * d);
    for ((xr, gr), &inv_std) in xhat
        .data()
        .chunks_exact(d)
        .zip(grad.data().chunks_exact(d))
        .zip(inv_stds)
    {
        let mean_g = gr.iter().fold(T::zero(), |a, &g| a + g) * inv_d;
        let mean_gx = xr.iter().zip(gr).fold(T::zero(), |a, (&x, &g)| a + x * g) * inv_d;
        out.extend(
            xr.iter()
                .zip(gr)
                .map(|(&x, &g)| inv_std * (g - mean_g - x * mean_gx)),
        );
    }
    finish(vec![n, d], out, "layer_norm_backward")
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.check_finite("softmax_rows input")?;
    let (n, d) = x.dims2()?;
    let mut out = Vec::with_capacity(n * d);
    for row in x.data().chunks_exact(d) {
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e /= total;
        }
    }
    finish(vec![n, d], out, "softmax_rows")
}

/// Gradient through softmax given its output `y`: `y ⊙ (g − Σ g⊙y)` per row.
pub fn softmax_rows_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = y.dims2()?;
    if grad.shape() != y.shape() {
        return Err(Error::shape(
            "softmax_backward",
            format!("{:?}", grad.shape()),
        ));
    }
    let mut out = Vec::with_capacity(n * d);
    for (yr, gr) in y.data().chunks_exact(d).zip(grad.data().chunks_exact(d)) {
        let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&y, &g)| a + y * g);
        out.extend(yr.iter().zip(gr).map(|(&y, &g)| y * (g - dot)));
    }
    finish(vec![n, d], out, "softmax_backward")
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, k, half) = (T::lit(GELU_C), T::lit(GELU_K), T::lit(0.5));
    x.map("gelu", |v| {
        half * v * (T::one() + (c * (v + k * v * v * v)).tanh())
    })
}

pub fn gelu_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, k, half, three) = (T::lit(GELU_C), T::lit(GELU_K), T::lit(0.5), T::lit(3.0));
    x.zip_map(grad, "gelu_backward", |v, g| {
        let th = (c * (v + k * v * v * v)).tanh();
        let d = half * (T::one() + th)
            + half * v * (T::one() - th * th) * c * (T::one() + three * k * v * v);
        g * d
    })
}

pub fn silu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.map("silu", |v| v / (T::one() + (-v).exp()))
}

pub fn silu_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad, "silu_backward", |v, g| {
        let s = T::one() / (T::one() + (-v).exp());
        g * s * (T::one() + v * (T::one() - s))
    })
}
