use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

const MAX_PERIOD: f64 = 10_000.0;

/// Sinusoidal step embedding of width `dim`, laid out as interleaved
/// `[sin(f₀t), cos(f₀t), sin(f₁t), cos(f₁t), ...]` with log-spaced `fᵢ`.
pub fn timestep_embedding<T: Real>(t: usize, dim: usize) -> Result<Tensor<T>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "timestep embedding width {dim} must be even"
        )));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-MAX_PERIOD.ln() * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out.push(T::lit(arg.sin()));
        out.push(T::lit(arg.cos()));
    }
    Tensor::new(vec![1, dim], out)
}

/// Fixed 2-D sin/cos position table for a `grid × grid` token layout:
/// the first half of each row encodes the patch row, the second the column.
pub fn position_table<T: Real>(grid: usize, dim: usize) -> Result<Tensor<T>> {
    if !dim.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "position embedding width {dim} must be a multiple of 4"
        )));
    }
    let quarter = dim / 4;
    let mut out = Vec::with_capacity(grid * grid * dim);
    for gy in 0..grid {
        for gx in 0..grid {
            for pos in [gy, gx] {
                for i in 0..quarter {
                    let omega = 1.0 / MAX_PERIOD.powf(i as f64 / quarter as f64);
                    out.push(T::lit((pos as f64 * omega).sin()));
                }
                for i in 0..quarter {
                    let omega = 1.0 / MAX_PERIOD.powf(i as f64 / quarter as f64);
                    out.push(T::lit((pos as f64 * omega).cos()));
                }
            }
        }
    }
    Tensor::new(vec![grid * grid, dim], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step_is_sin0_cos1() {
        let e = timestep_embedding::<f64>(0, 16).unwrap();
        for pair in e.data().chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
    }

    #[test]
    fn deterministic_and_distinct() {
        let a = timestep_embedding::<f32>(1, 32).unwrap();
        assert_eq!(a, timestep_embedding::<f32>(1, 32).unwrap());
        let b = timestep_embedding::<f32>(2, 32).unwrap();
        assert!(a.sub(&b).unwrap().sum_sq() > 0.0);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(timestep_embedding::<f32>(3, 7).is_err());
    }

    #[test]
    fn position_rows_are_distinct() {
        let p = position_table::<f64>(4, 16).unwrap();
        for i in 0..16 {
            for j in 0..i {
                let d: f64 = p
                    .row(i)
                    .unwrap()
                    .iter()
                    .zip(p.row(j).unwrap())
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                assert!(d > 1e-6);
            }
        }
    }
}
