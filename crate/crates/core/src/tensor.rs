//! Small tensor helpers shared by the schedule, denoiser and trainer.

use candle_core::{DType, Device, Shape, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Standard-normal tensor drawn from an explicit rng, so every random draw in
/// the pipeline is reproducible from a seed.
pub fn randn<R: Rng + ?Sized>(rng: &mut R, shape: impl Into<Shape>, dtype: DType) -> Result<Tensor> {
    let shape = shape.into();
    let data: Vec<f64> = (0..shape.elem_count()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Flattened f64 copy of a tensor.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
