use candle_core::{backprop::GradStore, DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSample;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::render::{GeometryMaps, MaterialMaps, Raster};
use crate::schedule::NoiseSchedule;
use crate::tensor::{randn, scalar_f64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_pbr: f64,
    pub l_cons: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn combine(l_pbr: f64, l_cons: f64, lambda: f64) -> Self {
        LossBreakdown {
            l_pbr,
            l_cons,
            l_total: (1.0 - lambda) * l_pbr + lambda * l_cons,
        }
    }
}

fn raster_tensor(r: &Raster) -> Result<Tensor> {
    Ok(Tensor::from_vec(r.to_chw(), (r.channels, r.height, r.width), &Device::Cpu)?)
}

/// `[0, 1]` image to the model's `[-1, 1]` range, `(C, H, W)`.
pub fn image_to_model(r: &Raster) -> Result<Tensor> {
    Ok(((raster_tensor(r)? * 2.0)? - 1.0)?)
}

/// Clean dual-lane target `(2, 3, H, W)` in `[-1, 1]`.
pub fn maps_to_model(m: &MaterialMaps) -> Result<Tensor> {
    Ok(Tensor::stack(&[image_to_model(&m.albedo)?, image_to_model(&m.mr)?], 0)?)
}

/// Normal (remapped to `[-1, 1]`) and canonical position channels, `(6, H, W)`.
pub fn geometry_to_model(g: &GeometryMaps) -> Result<Tensor> {
    Ok(Tensor::cat(&[image_to_model(&g.normal)?, raster_tensor(&g.position)?], 0)?)
}

/// Everything random about one optimization step, drawn up front so the loss
/// is a deterministic function of the weights.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    /// `(B, V, 2, 3, H, W)`
    pub x0: Tensor,
    /// `(B, V, 6, H, W)`
    pub geometry: Tensor,
    /// `(2B, 3, H, W)`: all first references, then all second references.
    pub references: Tensor,
    pub t: Vec<usize>,
    pub eps: Tensor,
    /// Which prediction (0 = first reference, 1 = second) feeds the noise loss.
    pub pick: Vec<usize>,
}

impl PreparedBatch {
    pub fn batch(&self) -> usize {
        self.t.len()
    }

    pub fn prepare<R: Rng + ?Sized>(samples: &[TrainingSample], sched: &NoiseSchedule, dtype: DType, rng: &mut R) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let mut x0 = Vec::new();
        let mut geo = Vec::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for s in samples {
            x0.push(Tensor::stack(&s.targets.iter().map(|v| maps_to_model(&v.maps)).collect::<Result<Vec<_>>>()?, 0)?);
            geo.push(Tensor::stack(&s.targets.iter().map(|v| geometry_to_model(&v.geometry)).collect::<Result<Vec<_>>>()?, 0)?);
            first.push(image_to_model(&s.references[0])?);
            second.push(image_to_model(&s.references[1])?);
        }
        let x0 = Tensor::stack(&x0, 0)?.to_dtype(dtype)?;
        let geometry = Tensor::stack(&geo, 0)?.to_dtype(dtype)?;
        first.extend(second);
        let references = Tensor::stack(&first, 0)?.to_dtype(dtype)?;
        let t: Vec<usize> = samples.iter().map(|_| sched.sample_timestep(rng)).collect();
        let eps = randn(rng, x0.dims(), dtype)?;
        let pick = samples.iter().map(|_| rng.gen_range(0..2)).collect();
        Ok(PreparedBatch { x0, geometry, references, t, eps, pick })
    }

    /// Noisy latent with one timestep per batch entry.
    pub fn z_t(&self, sched: &NoiseSchedule) -> Result<Tensor> {
        let zs = (0..self.batch())
            .map(|b| sched.q_sample(&self.x0.get(b)?, self.t[b], &self.eps.get(b)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&zs, 0)?)
    }
}

/// Output of the loss computation, before any backward pass.
pub struct LossGraph {
    pub loss: Tensor,
    pub breakdown: LossBreakdown,
    /// Predictions conditioned on the first and second reference.
    pub eps_hat: [Tensor; 2],
}

fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Both conditional passes share `z_t`, `t` and `eps`; they differ only in the
/// reference image. Squared norms are averaged over elements.
pub fn compute_loss(model: &Denoiser, batch: &PreparedBatch, sched: &NoiseSchedule, lambda: f64) -> Result<LossGraph> {
    let b = batch.batch();
    let z_t = batch.z_t(sched)?;
    let refs = model.reference_features(&batch.references)?;
    let z2 = Tensor::cat(&[&z_t, &z_t], 0)?;
    let g2 = Tensor::cat(&[&batch.geometry, &batch.geometry], 0)?;
    let t2: Vec<usize> = batch.t.iter().chain(batch.t.iter()).copied().collect();
    let out = model.forward(&z2, &t2, &g2, &refs)?;
    let e1 = out.narrow(0, 0, b)?;
    let e2 = out.narrow(0, b, b)?;

    let sel: Vec<f64> = batch.pick.iter().map(|&k| if k == 0 { 1.0 } else { 0.0 }).collect();
    let w = Tensor::from_vec(sel, (b, 1, 1, 1, 1, 1), &Device::Cpu)?.to_dtype(model.dtype())?;
    let chosen = (e1.broadcast_mul(&w)? + e2.broadcast_mul(&(1.0 - &w)?)?)?;
    let l_pbr = mse(&batch.eps, &chosen)?;
    let l_cons = mse(&e1, &e2)?;
    let loss = ((&l_pbr * (1.0 - lambda))? + (&l_cons * lambda)?)?;
    let breakdown = LossBreakdown::combine(scalar_f64(&l_pbr)?, scalar_f64(&l_cons)?, lambda);
    Ok(LossGraph { loss, breakdown, eps_hat: [e1, e2] })
}

/// One loss evaluation plus gradients for every trainable tensor.
pub fn training_step(model: &Denoiser, batch: &PreparedBatch, sched: &NoiseSchedule, lambda: f64, step: usize) -> Result<(LossBreakdown, GradStore)> {
    let graph = compute_loss(model, batch, sched, lambda)?;
    let lb = graph.breakdown;
    if !(lb.l_pbr.is_finite() && lb.l_cons.is_finite() && lb.l_total.is_finite()) {
        return Err(Error::TrainingDivergence {
            step,
            detail: format!(
                "non-finite loss (pbr {}, cons {}, total {}) at t = {:?}",
                lb.l_pbr, lb.l_cons, lb.l_total, batch.t
            ),
        });
    }
    let grads = graph.loss.backward()?;
    Ok((lb, grads))
}
