//! Miniature diffusion transformer: patch embedding, adaptive-norm blocks
//! conditioned on step and class, and a linear head back to patch space.
//! The backward pass is written out by hand against the cached forward
//! activations.

use super::config::{Condition, ModelConfig};
use super::embedding::{position_table, timestep_embedding};
use super::params::{BlockParams, DenoiserParams};
use super::tokens::{patchify, unpatchify, TokenGrid};
use crate::error::{Error, Result};
use crate::numerics::{
    add_row_vector, column_sums, gelu, gelu_backward, matmul, matmul_nt, matmul_tn, mul_row_vector,
    silu, silu_backward, softmax_rows, softmax_rows_backward, standardize_rows,
    standardize_rows_backward, Real, Tensor,
};

const LN_EPS: f64 = 1e-6;

/// A parameterized noise predictor ε_θ(x_t, t, c).
#[derive(Clone, Debug)]
pub struct Denoiser<T = f32> {
    config: ModelConfig,
    params: DenoiserParams<T>,
    positions: Tensor<T>,
}

struct HeadCache<T> {
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    attn: Tensor<T>,
}

struct BlockCache<T> {
    modulation: [Tensor<T>; 6],
    xhat1: Tensor<T>,
    inv1: Vec<T>,
    u1: Tensor<T>,
    heads: Vec<HeadCache<T>>,
    attn_out: Tensor<T>,
    y1: Tensor<T>,
    xhat2: Tensor<T>,
    inv2: Vec<T>,
    u2: Tensor<T>,
    z: Tensor<T>,
    g: Tensor<T>,
    y2: Tensor<T>,
}

/// Activations retained by [`Denoiser::forward_cached`] for the backward pass.
pub struct ForwardCache<T> {
    class_row: usize,
    temb0: Tensor<T>,
    a1: Tensor<T>,
    s1: Tensor<T>,
    cond: Tensor<T>,
    cond_act: Tensor<T>,
    tokens: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    xf: Tensor<T>,
    invf: Vec<T>,
    final_scale: Tensor<T>,
    uf: Tensor<T>,
}

fn columns<T: Real>(x: &Tensor<T>, start: usize, width: usize) -> Result<Tensor<T>> {
    let (n, d) = x.dims2()?;
    if start + width > d {
        return Err(Error::shape("columns", format!("{start}+{width} > {d}")));
    }
    let data = x
        .data()
        .chunks_exact(d)
        .flat_map(|row| row[start..start + width].iter().copied())
        .collect();
    Ok(Tensor::from_parts(vec![n, width], data))
}

fn write_columns<T: Real>(dst: &mut [T], width: usize, start: usize, src: &Tensor<T>) {
    let w = src.shape()[1];
    for (drow, srow) in dst.chunks_exact_mut(width).zip(src.data().chunks_exact(w)) {
        drow[start..start + w].copy_from_slice(srow);
    }
}

/// Splits a `[1, k·D]` row into `k` vectors of length `D`.
fn split_row<T: Real, const K: usize>(row: &Tensor<T>, d: usize) -> [Tensor<T>; K] {
    std::array::from_fn(|i| Tensor::from_parts(vec![d], row.data()[i * d..(i + 1) * d].to_vec()))
}

fn concat_row<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let data: Vec<T> = parts
        .iter()
        .flat_map(|p| p.data().iter().copied())
        .collect();
    Tensor::from_parts(vec![1, data.len()], data)
}

fn one_plus<T: Real>(v: &Tensor<T>) -> Result<Tensor<T>> {
    v.map("modulate", |s| T::one() + s)
}

/// `x̂ ⊙ (1 + scale) + shift` broadcast over rows.
fn modulate<T: Real>(xhat: &Tensor<T>, shift: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    add_row_vector(&mul_row_vector(xhat, &one_plus(scale)?)?, shift)
}

/// Returns `(d_xhat, d_shift, d_scale)` for [`modulate`].
fn modulate_backward<T: Real>(
    xhat: &Tensor<T>,
    scale: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d_xhat = mul_row_vector(grad, &one_plus(scale)?)?;
    let d_shift = column_sums(grad)?;
    let d_scale = column_sums(&grad.mul(xhat)?)?;
    Ok((d_xhat, d_shift, d_scale))
}

/// `x + y ⊙ gate` with a per-column gate.
fn gated_residual<T: Real>(x: &Tensor<T>, y: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    x.add(&mul_row_vector(y, gate)?)
}

/// `x[1×D]·w + b`.
fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    add_row_vector(&matmul(x, w)?, b)
}

impl<T: Real> Denoiser<T> {
    pub fn new(config: ModelConfig, params: DenoiserParams<T>) -> Result<Self> {
        config.validate()?;
        // from_tensors re-checks every shape against the config
        let params =
            DenoiserParams::from_tensors(&config, params.tensors().into_iter().cloned().collect())?;
        let positions = position_table(config.grid_size(), config.embed_dim)?;
        Ok(Denoiser {
            config,
            params,
            positions,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &DenoiserParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut DenoiserParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> DenoiserParams<T> {
        self.params
    }

    /// Predicted noise for `x_t` at step `t` under condition `c`.
    pub fn forward(&self, x_t: &Tensor<T>, t: usize, c: Condition) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x_t, t, c)?.0)
    }

    pub fn forward_cached(
        &self,
        x_t: &Tensor<T>,
        t: usize,
        c: Condition,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let cfg = &self.config;
        if x_t.shape() != cfg.image_shape() {
            return Err(Error::shape(
                "Denoiser::forward",
                format!("expected {:?}, got {:?}", cfg.image_shape(), x_t.shape()),
            ));
        }
        let p = &self.params;
        let d = cfg.embed_dim;
        let class_row = c.table_row(cfg.num_classes)?;

        // conditioning vector
        let temb0 = timestep_embedding::<T>(t, d)?;
        let a1 = linear(&temb0, &p.time_w1, &p.time_b1)?;
        let s1 = silu(&a1)?;
        let temb = linear(&s1, &p.time_w2, &p.time_b2)?;
        let class_vec = Tensor::from_parts(vec![1, d], p.class_table.row(class_row)?.to_vec());
        let cond = temb.add(&class_vec)?;
        let cond_act = silu(&cond)?;

        let tokens = patchify(x_t, cfg.patch_size)?.into_tensor();
        let mut h =
            add_row_vector(&matmul(&tokens, &p.patch_w)?, &p.patch_b)?.add(&self.positions)?;

        let mut blocks = Vec::with_capacity(cfg.depth);
        for bp in &p.blocks {
            let (h_next, cache) = self.block_forward(bp, &h, &cond_act)?;
            blocks.push(cache);
            h = h_next;
        }

        let fm = linear(&cond_act, &p.final_mod_w, &p.final_mod_b)?;
        let [final_shift, final_scale] = split_row::<T, 2>(&fm, d);
        let (xf, invf) = standardize_rows(&h, T::lit(LN_EPS))?;
        let uf = modulate(&xf, &final_shift, &final_scale)?;
        let out = add_row_vector(&matmul(&uf, &p.out_w)?, &p.out_b)?;
        let eps = unpatchify(
            &TokenGrid::new(out)?,
            cfg.patch_size,
            cfg.image_size,
            cfg.image_size,
            cfg.channels,
        )?;

        let cache = ForwardCache {
            class_row,
            temb0,
            a1,
            s1,
            cond,
            cond_act,
            tokens,
            blocks,
            xf,
            invf,
            final_scale,
            uf,
        };
        Ok((eps, cache))
    }

    fn block_forward(
        &self,
        bp: &BlockParams<T>,
        h: &Tensor<T>,
        cond_act: &Tensor<T>,
    ) -> Result<(Tensor<T>, BlockCache<T>)> {
        let cfg = &self.config;
        let (n, d) = (cfg.num_tokens(), cfg.embed_dim);
        let dh = cfg.head_dim();
        let attn_scale = T::lit(1.0 / (dh as f64).sqrt());

        let m = linear(cond_act, &bp.mod_w, &bp.mod_b)?;
        let modulation = split_row::<T, 6>(&m, d);
        let [shift_a, scale_a, gate_a, shift_m, scale_m, gate_m] = &modulation;

        let (xhat1, inv1) = standardize_rows(h, T::lit(LN_EPS))?;
        let u1 = modulate(&xhat1, shift_a, scale_a)?;
        let qkv = add_row_vector(&matmul(&u1, &bp.qkv_w)?, &bp.qkv_b)?;
        let mut attn_out = vec![T::zero(); n * d];
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let q = columns(&qkv, hd * dh, dh)?;
            let k = columns(&qkv, d + hd * dh, dh)?;
            let v = columns(&qkv, 2 * d + hd * dh, dh)?;
            let attn = softmax_rows(&matmul_nt(&q, &k)?.scale(attn_scale)?)?;
            let o = matmul(&attn, &v)?;
            write_columns(&mut attn_out, d, hd * dh, &o);
            heads.push(HeadCache { q, k, v, attn });
        }
        let attn_out = Tensor::from_parts(vec![n, d], attn_out);
        let y1 = add_row_vector(&matmul(&attn_out, &bp.proj_w)?, &bp.proj_b)?;
        let h_mid = gated_residual(h, &y1, gate_a)?;

        let (xhat2, inv2) = standardize_rows(&h_mid, T::lit(LN_EPS))?;
        let u2 = modulate(&xhat2, shift_m, scale_m)?;
        let z = add_row_vector(&matmul(&u2, &bp.mlp_w1)?, &bp.mlp_b1)?;
        let g = gelu(&z)?;
        let y2 = add_row_vector(&matmul(&g, &bp.mlp_w2)?, &bp.mlp_b2)?;
        let h_out = gated_residual(&h_mid, &y2, gate_m)?;

        Ok((
            h_out,
            BlockCache {
                modulation,
                xhat1,
                inv1,
                u1,
                heads,
                attn_out,
                y1,
                xhat2,
                inv2,
                u2,
                z,
                g,
                y2,
            },
        ))
    }

    /// Gradients of all parameters given `d_eps = ∂L/∂ε̂` (image-shaped).
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_eps: &Tensor<T>,
    ) -> Result<DenoiserParams<T>> {
        let cfg = &self.config;
        let p = &self.params;
        let d = cfg.embed_dim;
        let mut grads = DenoiserParams::zeros(cfg)?;

        let d_out = patchify(d_eps, cfg.patch_size)?.into_tensor();
        grads.out_w = matmul_tn(&cache.uf, &d_out)?;
        grads.out_b = column_sums(&d_out)?;
        let d_uf = matmul_nt(&d_out, &p.out_w)?;
        let (d_xf, d_fshift, d_fscale) = modulate_backward(&cache.xf, &cache.final_scale, &d_uf)?;
        let mut dh = standardize_rows_backward(&cache.xf, &cache.invf, &d_xf)?;
        let d_fm = concat_row(&[&d_fshift, &d_fscale]);
        grads.final_mod_w = matmul_tn(&cache.cond_act, &d_fm)?;
        grads.final_mod_b = d_fm.clone().reshape(&[2 * d])?;
        let mut d_cond_act = matmul_nt(&d_fm, &p.final_mod_w)?;

        for (i, (bp, bc)) in p.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let (dh_in, d_m) = self.block_backward(bp, bc, &dh, &mut grads.blocks[i])?;
            grads.blocks[i].mod_w = matmul_tn(&cache.cond_act, &d_m)?;
            grads.blocks[i].mod_b = d_m.clone().reshape(&[6 * d])?;
            d_cond_act.add_assign(&matmul_nt(&d_m, &bp.mod_w)?)?;
            dh = dh_in;
        }

        grads.patch_w = matmul_tn(&cache.tokens, &dh)?;
        grads.patch_b = column_sums(&dh)?;

        let d_cond = silu_backward(&cache.cond, &d_cond_act)?;
        let row = cache.class_row;
        grads.class_table.data_mut()[row * d..(row + 1) * d].copy_from_slice(d_cond.data());
        grads.time_w2 = matmul_tn(&cache.s1, &d_cond)?;
        grads.time_b2 = d_cond.clone().reshape(&[d])?;
        let d_s1 = matmul_nt(&d_cond, &p.time_w2)?;
        let d_a1 = silu_backward(&cache.a1, &d_s1)?;
        grads.time_w1 = matmul_tn(&cache.temb0, &d_a1)?;
        grads.time_b1 = d_a1.reshape(&[d])?;
        Ok(grads)
    }

    /// Returns the gradient w.r.t. the block input and w.r.t. the block's
    /// `[1, 6D]` modulation row; fills the remaining block gradients.
    fn block_backward(
        &self,
        bp: &BlockParams<T>,
        bc: &BlockCache<T>,
        dh: &Tensor<T>,
        g: &mut BlockParams<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let cfg = &self.config;
        let (n, d) = (cfg.num_tokens(), cfg.embed_dim);
        let dh_dim = cfg.head_dim();
        let attn_scale = T::lit(1.0 / (dh_dim as f64).sqrt());
        let [_, scale_a, gate_a, _, scale_m, gate_m] = &bc.modulation;

        // h_out = h_mid + gate_m ⊙ y2
        let d_gate_m = column_sums(&dh.mul(&bc.y2)?)?;
        let d_y2 = mul_row_vector(dh, gate_m)?;
        g.mlp_w2 = matmul_tn(&bc.g, &d_y2)?;
        g.mlp_b2 = column_sums(&d_y2)?;
        let d_g = matmul_nt(&d_y2, &bp.mlp_w2)?;
        let d_z = gelu_backward(&bc.z, &d_g)?;
        g.mlp_w1 = matmul_tn(&bc.u2, &d_z)?;
        g.mlp_b1 = column_sums(&d_z)?;
        let d_u2 = matmul_nt(&d_z, &bp.mlp_w1)?;
        let (d_xhat2, d_shift_m, d_scale_m) = modulate_backward(&bc.xhat2, scale_m, &d_u2)?;
        let dh_mid = dh.add(&standardize_rows_backward(&bc.xhat2, &bc.inv2, &d_xhat2)?)?;

        // h_mid = h_in + gate_a ⊙ y1
        let d_gate_a = column_sums(&dh_mid.mul(&bc.y1)?)?;
        let d_y1 = mul_row_vector(&dh_mid, gate_a)?;
        g.proj_w = matmul_tn(&bc.attn_out, &d_y1)?;
        g.proj_b = column_sums(&d_y1)?;
        let d_attn_out = matmul_nt(&d_y1, &bp.proj_w)?;
        let mut d_qkv = vec![T::zero(); n * 3 * d];
        for (hd, hc) in bc.heads.iter().enumerate() {
            let d_o = columns(&d_attn_out, hd * dh_dim, dh_dim)?;
            let d_attn = matmul_nt(&d_o, &hc.v)?;
            let d_v = matmul_tn(&hc.attn, &d_o)?;
            let d_s = softmax_rows_backward(&hc.attn, &d_attn)?.scale(attn_scale)?;
            let d_q = matmul(&d_s, &hc.k)?;
            let d_k = matmul_tn(&d_s, &hc.q)?;
            write_columns(&mut d_qkv, 3 * d, hd * dh_dim, &d_q);
            write_columns(&mut d_qkv, 3 * d, d + hd * dh_dim, &d_k);
            write_columns(&mut d_qkv, 3 * d, 2 * d + hd * dh_dim, &d_v);
        }
        let d_qkv = Tensor::new(vec![n, 3 * d], d_qkv)?;
        g.qkv_w = matmul_tn(&bc.u1, &d_qkv)?;
        g.qkv_b = column_sums(&d_qkv)?;
        let d_u1 = matmul_nt(&d_qkv, &bp.qkv_w)?;
        let (d_xhat1, d_shift_a, d_scale_a) = modulate_backward(&bc.xhat1, scale_a, &d_u1)?;
        let dh_in = dh_mid.add(&standardize_rows_backward(&bc.xhat1, &bc.inv1, &d_xhat1)?)?;

        let d_m = concat_row(&[
            &d_shift_a, &d_scale_a, &d_gate_a, &d_shift_m, &d_scale_m, &d_gate_m,
        ]);
        Ok((dh_in, d_m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian, substream};

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            channels: 1,
            patch_size: 4,
            embed_dim: 16,
            depth: 1,
            heads: 2,
            num_classes: 3,
            mlp_ratio: 2,
        }
    }

    #[test]
    fn output_shape_and_purity() {
        let cfg = tiny();
        let params = DenoiserParams::init_random(&cfg, 0.1, &mut substream(1, "init", 0)).unwrap();
        let net: Denoiser<f32> = Denoiser::new(cfg, params).unwrap();
        let x: Tensor<f32> = gaussian(&cfg.image_shape(), &mut substream(1, "x", 0));
        let a = net.forward(&x, 17, Condition::Class(1)).unwrap();
        let b = net.forward(&x, 17, Condition::Class(1)).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a, b);
        let u = net.forward(&x, 17, Condition::Null).unwrap();
        assert!(a.sub(&u).unwrap().sum_sq() > 0.0);
    }

    #[test]
    fn initial_prediction_is_zero() {
        let cfg = tiny();
        let params = DenoiserParams::init(&cfg, &mut substream(1, "init", 0)).unwrap();
        let net: Denoiser<f32> = Denoiser::new(cfg, params).unwrap();
        let x: Tensor<f32> = gaussian(&cfg.image_shape(), &mut substream(1, "x", 0));
        assert_eq!(
            net.forward(&x, 500, Condition::Null).unwrap().max_abs(),
            0.0
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = tiny();
        let net: Denoiser<f32> = Denoiser::new(cfg, DenoiserParams::zeros(&cfg).unwrap()).unwrap();
        let x = Tensor::zeros(&cfg.image_shape());
        assert!(matches!(
            net.forward(&x, 1, Condition::Class(3)),
            Err(Error::ClassOutOfRange { .. })
        ));
        assert!(net
            .forward(&Tensor::zeros(&[1, 4, 4]), 1, Condition::Null)
            .is_err());
    }

    /// Directional derivative check: ⟨∇L, v⟩ vs (L(θ+hv) − L(θ−hv)) / 2h
    /// for L = ⟨ε̂, w⟩ with a random probe w.
    #[test]
    fn backward_matches_directional_difference() {
        let cfg = tiny();
        let params: DenoiserParams<f64> =
            DenoiserParams::init_random(&cfg, 0.1, &mut substream(2, "init", 0)).unwrap();
        let dir: DenoiserParams<f64> =
            DenoiserParams::init_random(&cfg, 1.0, &mut substream(2, "dir", 0)).unwrap();
        let x: Tensor<f64> = gaussian(&cfg.image_shape(), &mut substream(2, "x", 0));
        let w: Tensor<f64> = gaussian(&cfg.image_shape(), &mut substream(2, "w", 0));
        let net = Denoiser::new(cfg, params.clone()).unwrap();
        let (_, cache) = net.forward_cached(&x, 250, Condition::Class(2)).unwrap();
        let grads = net.backward(&cache, &w).unwrap();
        let analytic: f64 = grads
            .tensors()
            .iter()
            .zip(dir.tensors())
            .map(|(g, v)| g.mul(v).unwrap().sum())
            .sum();

        let h = 1e-5;
        let eval = |s: f64| {
            let mut p = params.clone();
            let mut step = dir.clone();
            step.scale_in_place(s);
            p.accumulate(&step).unwrap();
            let net = Denoiser::new(cfg, p).unwrap();
            net.forward(&x, 250, Condition::Class(2))
                .unwrap()
                .mul(&w)
                .unwrap()
                .sum()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(
            (fd - analytic).abs() < 1e-6 * analytic.abs().max(1.0),
            "{fd} vs {analytic}"
        );
    }
}
