use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, ReferenceFeatures, LANES, LANE_CHANNELS};
use crate::error::{Error, Result};
use crate::render::{GeometryMaps, MaterialMaps, Raster};
use crate::schedule::{NoiseSchedule, SamplerMode};
use crate::tensor::{randn, to_f64_vec};
use crate::trainer::{geometry_to_model, image_to_model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub mode: SamplerMode,
    /// Clamp each x0 estimate to the data range before stepping.
    pub clip_x0: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 50,
            mode: SamplerMode::DdimEta0,
            clip_x0: true,
        }
    }
}

/// Anything that predicts the noise in a latent `(B, V, 2, 3, H, W)`.
pub trait EpsPredictor {
    fn predict(&self, z_t: &Tensor, t: usize) -> Result<Tensor>;
}

/// The trained denoiser with fixed geometry and cached reference tokens.
pub struct ModelPredictor<'a> {
    model: &'a Denoiser,
    geometry: Tensor,
    refs: ReferenceFeatures,
}

impl<'a> ModelPredictor<'a> {
    /// `geometry` is `(B, V, 6, H, W)`, `references` `(B, 3, H, W)`.
    pub fn new(model: &'a Denoiser, geometry: Tensor, references: &Tensor) -> Result<Self> {
        let refs = model.reference_features(references)?.detach();
        Ok(ModelPredictor { model, geometry: geometry.to_dtype(model.dtype())?, refs })
    }
}

impl EpsPredictor for ModelPredictor<'_> {
    fn predict(&self, z_t: &Tensor, t: usize) -> Result<Tensor> {
        let b = z_t.dim(0)?;
        Ok(self.model.forward(z_t, &vec![t; b], &self.geometry, &self.refs)?.detach())
    }
}

/// Runs the strided reverse chain from `z_init` down to `t = 0` and returns
/// the clean estimate.
pub fn run_chain<R: Rng + ?Sized>(
    pred: &dyn EpsPredictor,
    sched: &NoiseSchedule,
    z_init: Tensor,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Tensor> {
    let ts = sched.inference_timesteps(cfg.steps)?;
    let mut z = z_init;
    for w in ts.windows(2) {
        let (t, t_prev) = (w[0], w[1]);
        let mut eps = pred.predict(&z, t)?;
        if eps.dims() != z.dims() {
            return Err(Error::invalid("predictor returned a differently shaped noise estimate"));
        }
        if cfg.clip_x0 {
            let ab = sched.alpha_bar[t];
            let x0 = sched.predict_x0(&z, t, &eps)?.clamp(-1.0, 1.0)?;
            eps = ((&z - (x0 * ab.sqrt())?)? / (1.0 - ab).sqrt())?;
        }
        z = sched.reverse_step_to(&z, t, t_prev, &eps, cfg.mode, rng)?;
    }
    Ok(z)
}

/// `(V, 6, H, W)` geometry tensor.
pub fn geometry_tensor(geometry: &[GeometryMaps]) -> Result<Tensor> {
    Ok(Tensor::stack(&geometry.iter().map(geometry_to_model).collect::<Result<Vec<_>>>()?, 0)?)
}

/// Maps a clean latent `(V, 2, 3, H, W)` to material maps: rescale to
/// `[0, 1]`, clamp, zero the background and the MR red channel.
pub fn latent_to_maps(x0: &Tensor, geometry: &[GeometryMaps]) -> Result<Vec<MaterialMaps>> {
    let (v, h, w) = (x0.dim(0)?, x0.dim(3)?, x0.dim(4)?);
    if v != geometry.len() {
        return Err(Error::invalid("latent and geometry view counts differ"));
    }
    let mut out = Vec::with_capacity(v);
    for (i, geo) in geometry.iter().enumerate() {
        let view = x0.get(i)?;
        let mut lanes = Vec::with_capacity(LANES);
        for lane in 0..LANES {
            let chw: Vec<f32> = to_f64_vec(&view.get(lane)?)?
                .into_iter()
                .map(|x| ((x + 1.0) * 0.5).clamp(0.0, 1.0) as f32)
                .collect();
            let mut r = Raster::from_chw(h, w, LANE_CHANNELS, &chw)?;
            for row in 0..h {
                for col in 0..w {
                    let covered = geo.covered(row, col);
                    let px = r.pixel_mut(row, col);
                    if !covered {
                        px.iter_mut().for_each(|c| *c = 0.0);
                    } else if lane == 1 {
                        px[0] = 0.0;
                    }
                }
            }
            lanes.push(r);
        }
        let mr = lanes.pop().unwrap();
        let albedo = lanes.pop().unwrap();
        out.push(MaterialMaps { albedo, mr });
    }
    Ok(out)
}

/// Generates maps for every view once per reference image. All references
/// start from the same initial noise, so with a deterministic sampler the
/// outputs differ only through the reference.
pub fn sample_multiview_batch<R: Rng + ?Sized>(
    model: &Denoiser,
    sched: &NoiseSchedule,
    geometry: &[GeometryMaps],
    references: &[Raster],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<Vec<MaterialMaps>>> {
    let mc = model.config();
    let r = mc.resolution;
    if geometry.is_empty() || references.is_empty() {
        return Err(Error::invalid("sampling needs geometry and at least one reference"));
    }
    for g in geometry {
        if g.resolution() != (r, r) {
            return Err(Error::invalid(format!("geometry is {:?}, model expects {r}x{r}", g.resolution())));
        }
    }
    for im in references {
        if im.height != r || im.width != r || im.channels != LANE_CHANNELS {
            return Err(Error::invalid(format!(
                "reference is {}x{}x{}, model expects {r}x{r}x3",
                im.height, im.width, im.channels
            )));
        }
    }
    let (b, v) = (references.len(), geometry.len());
    let geo = geometry_tensor(geometry)?.unsqueeze(0)?.broadcast_as((b, v, mc.geometry_channels, r, r))?.contiguous()?;
    let refs = Tensor::stack(&references.iter().map(image_to_model).collect::<Result<Vec<_>>>()?, 0)?;
    let pred = ModelPredictor::new(model, geo, &refs)?;
    let noise = randn(rng, (1, v, LANES, LANE_CHANNELS, r, r), model.dtype())?;
    let z = noise.broadcast_as((b, v, LANES, LANE_CHANNELS, r, r))?.contiguous()?;
    let x0 = run_chain(&pred, sched, z, cfg, rng)?;
    (0..b).map(|i| latent_to_maps(&x0.get(i)?, geometry)).collect()
}

/// Material maps for each view given one reference image.
pub fn sample_multiview<R: Rng + ?Sized>(
    model: &Denoiser,
    sched: &NoiseSchedule,
    geometry: &[GeometryMaps],
    reference: &Raster,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<MaterialMaps>> {
    Ok(sample_multiview_batch(model, sched, geometry, std::slice::from_ref(reference), cfg, rng)?.remove(0))
}
