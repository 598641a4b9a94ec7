//! Functional layers over named parameters.

use candle_core::{Tensor, D};

use super::params::ParamStore;
use crate::error::Result;

/// `x @ w + b` over the last dimension; `w` is stored `(in, out)`.
pub fn linear(x: &Tensor, p: &ParamStore, name: &str) -> Result<Tensor> {
    let y = x.broadcast_matmul(p.get(&format!("{name}.w"))?)?;
    let bias = format!("{name}.b");
    if p.contains(&bias) {
        Ok(y.broadcast_add(p.get(&bias)?)?)
    } else {
        Ok(y)
    }
}

pub fn conv2d(x: &Tensor, p: &ParamStore, name: &str, padding: usize) -> Result<Tensor> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    let y = x.conv2d(w, padding, 1, 1, 1)?;
    Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
}

fn normalize_last(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// Layer norm over the last (channel) dimension of token tensors.
pub fn layer_norm(x: &Tensor, p: &ParamStore, name: &str) -> Result<Tensor> {
    let y = normalize_last(x, 1e-5)?;
    Ok(y
        .broadcast_mul(p.get(&format!("{name}.g"))?)?
        .broadcast_add(p.get(&format!("{name}.b"))?)?)
}

/// Group norm over `(N, C, H, W)` feature maps.
pub fn group_norm(x: &Tensor, groups: usize, p: &ParamStore, name: &str) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let y = normalize_last(&x.reshape((n, groups, (c / groups) * h * w))?, 1e-5)?.reshape((n, c, h, w))?;
    let g = p.get(&format!("{name}.g"))?.reshape((1, c, 1, 1))?;
    let b = p.get(&format!("{name}.b"))?.reshape((1, c, 1, 1))?;
    Ok(y.broadcast_mul(&g)?.broadcast_add(&b)?)
}

/// `(N, C, H, W) -> (N, 4C, H/2, W/2)`, channel order `(c, dy, dx)`.
pub fn space_to_depth(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x
        .reshape((n, c, h / 2, 2, w / 2, 2))?
        .permute((0, 1, 3, 5, 2, 4))?
        .contiguous()?
        .reshape((n, c * 4, h / 2, w / 2))?)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(x: &Tensor) -> Result<Tensor> {
    let (n, c4, h, w) = x.dims4()?;
    let c = c4 / 4;
    Ok(x
        .reshape((n, c, 2, 2, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .contiguous()?
        .reshape((n, c, h * 2, w * 2))?)
}

/// Nearest-neighbour 2x upsampling built from broadcasts (differentiable).
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x
        .reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .contiguous()?
        .reshape((n, c, h * 2, w * 2))?)
}

/// Sinusoidal embedding of integer timesteps, `(B,) -> (B, dim)`.
pub fn timestep_embedding(ts: &[usize], dim: usize, dtype: candle_core::DType) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            data.push((t as f64 * freq).sin());
        }
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            data.push((t as f64 * freq).cos());
        }
    }
    Ok(Tensor::from_vec(data, (ts.len(), dim), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}
