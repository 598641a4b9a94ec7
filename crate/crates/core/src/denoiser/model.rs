use candle_core::{DType, Device, Tensor};
use rand::Rng;

use super::attention::{
    material_embedding_attention, mcaa_inject, multiview_attention, reference_cross_attention, AttentionWeights, RefLevel,
};
use super::config::{DenoiserConfig, Lane, ATTENTION_STAGES, LANES, LANE_CHANNELS};
use super::layers::{conv2d, depth_to_space, group_norm, layer_norm, linear, space_to_depth, timestep_embedding, upsample2x};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

type Spec = (String, Vec<usize>, Init);

fn lin(s: &mut Vec<Spec>, name: &str, i: usize, o: usize, bias: bool, init: Init) {
    s.push((format!("{name}.w"), vec![i, o], init));
    if bias {
        s.push((format!("{name}.b"), vec![o], Init::Zeros));
    }
}

fn conv(s: &mut Vec<Spec>, name: &str, i: usize, o: usize, k: usize, gain: f64) {
    let std = gain / ((i * k * k) as f64).sqrt();
    s.push((format!("{name}.w"), vec![o, i, k, k], Init::Normal(std)));
    s.push((format!("{name}.b"), vec![o], Init::Zeros));
}

fn norm(s: &mut Vec<Spec>, name: &str, c: usize) {
    s.push((format!("{name}.g"), vec![c], Init::Ones));
    s.push((format!("{name}.b"), vec![c], Init::Zeros));
}

fn unit(i: usize) -> Init {
    Init::Normal(1.0 / (i as f64).sqrt())
}

fn res(s: &mut Vec<Spec>, name: &str, c: usize, td: usize) {
    norm(s, &format!("{name}.gn1"), c);
    conv(s, &format!("{name}.conv1"), c, c, 3, 1.0);
    lin(s, &format!("{name}.temb"), td, c, true, unit(td));
    norm(s, &format!("{name}.gn2"), c);
    conv(s, &format!("{name}.conv2"), c, c, 3, 0.5);
}

/// Name, shape and initializer of every trainable tensor for a config.
fn param_specs(cfg: &DenoiserConfig) -> Vec<Spec> {
    let mut s = Vec::new();
    let w = cfg.width;
    let w2 = cfg.attn_width();
    let td = cfg.time_width();
    let p2 = cfg.patch * cfg.patch;
    let cin = (LANE_CHANNELS + cfg.geometry_channels) * p2;

    lin(&mut s, "time.l1", w, td, true, unit(w));
    lin(&mut s, "time.l2", td, td, true, unit(td));

    conv(&mut s, "stem", cin, w, 3, 1.0);
    for i in 0..cfg.res_blocks {
        res(&mut s, &format!("enc0.res{i}"), w, td);
    }
    conv(&mut s, "down1", w * 4, w2, 3, 1.0);
    for i in 0..cfg.res_blocks {
        res(&mut s, &format!("enc1.res{i}"), w2, td);
    }
    conv(&mut s, "down2", w2 * 4, w2, 3, 1.0);
    for i in 0..cfg.res_blocks {
        res(&mut s, &format!("mid.res{i}"), w2, td);
    }
    conv(&mut s, "up1", w2 * 2, w2, 3, 1.0);
    for i in 0..cfg.res_blocks {
        res(&mut s, &format!("dec1.res{i}"), w2, td);
    }
    conv(&mut s, "up2", w2 + w, w, 3, 1.0);
    for i in 0..cfg.res_blocks {
        res(&mut s, &format!("dec0.res{i}"), w, td);
    }
    norm(&mut s, "out.gn", w);
    conv(&mut s, "out.conv", w, LANE_CHANNELS * p2, 3, 0.5);

    let e = cfg.embed_width;
    for k in 0..ATTENTION_STAGES {
        let st = format!("stage{k}");
        norm(&mut s, &format!("{st}.mv.ln"), w2);
        for m in ["q", "k", "v"] {
            lin(&mut s, &format!("{st}.mv.{m}"), w2, w2, false, unit(w2));
        }
        lin(&mut s, &format!("{st}.mv.o"), w2, w2, true, Init::Normal(0.5 / (w2 as f64).sqrt()));

        norm(&mut s, &format!("{st}.ref.ln"), w2);
        norm(&mut s, &format!("{st}.ref.ref_ln"), w2);
        for m in ["q", "k", "v"] {
            lin(&mut s, &format!("{st}.ref.{m}"), w2, w2, false, unit(w2));
        }
        lin(&mut s, &format!("{st}.ref.o"), w2, w2, true, Init::Zeros);

        norm(&mut s, &format!("{st}.emb.ln"), w2);
        lin(&mut s, &format!("{st}.emb.q"), w2, w2, false, unit(w2));
        lin(&mut s, &format!("{st}.emb.k"), e, w2, false, unit(e));
        lin(&mut s, &format!("{st}.emb.v"), e, w2, false, unit(e));
        lin(&mut s, &format!("{st}.emb.o"), w2, w2, true, Init::Zeros);
    }
    for lane in Lane::ALL {
        s.push((embedding_name(lane), vec![cfg.embed_tokens, e], Init::Normal(1.0)));
    }
    s
}

/// Parameter name of a lane's material embedding.
pub fn embedding_name(lane: Lane) -> String {
    format!("embed.{}", lane.name())
}

/// Trainable-scalar count implied by a config.
pub fn param_count(cfg: &DenoiserConfig) -> usize {
    param_specs(cfg).iter().map(|(_, shape, _)| shape.iter().product::<usize>()).sum()
}

/// Reference-branch tokens for every attention stage.
#[derive(Debug, Clone)]
pub struct ReferenceFeatures {
    pub batch: usize,
    pub levels: Vec<RefLevel>,
}

impl ReferenceFeatures {
    pub fn level(&self, stage: usize) -> Result<&RefLevel> {
        self.levels
            .iter()
            .find(|l| l.stage == stage)
            .ok_or_else(|| Error::invalid(format!("no reference tokens for stage {stage}")))
    }

    /// Copy cut from the autograd graph.
    pub fn detach(&self) -> Self {
        ReferenceFeatures {
            batch: self.batch,
            levels: self
                .levels
                .iter()
                .map(|l| RefLevel { stage: l.stage, tokens: l.tokens.detach() })
                .collect(),
        }
    }
}

enum Pass<'a> {
    Generate { batch: usize, views: usize, refs: &'a ReferenceFeatures },
    Reference { cache: Vec<RefLevel> },
}

/// Dual-lane multi-view noise predictor.
#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    params: ParamStore,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(cfg: DenoiserConfig, dtype: DType, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new(dtype);
        for (name, shape, init) in param_specs(&cfg) {
            match init {
                Init::Zeros => params.zeros(&name, &shape)?,
                Init::Ones => params.ones(&name, &shape)?,
                Init::Normal(std) => params.normal(&name, &shape, std, rng)?,
            }
        }
        Ok(Denoiser { cfg, params })
    }

    /// Wraps existing parameters after checking names and shapes against the config.
    pub fn from_params(cfg: DenoiserConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(&cfg);
        if specs.len() != params.len() {
            return Err(Error::CheckpointIncompatible(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &specs {
            let t = params
                .get(name)
                .map_err(|_| Error::CheckpointIncompatible(format!("missing parameter {name}")))?;
            if t.dims() != shape.as_slice() {
                return Err(Error::CheckpointIncompatible(format!(
                    "parameter {name} has shape {:?}, config expects {shape:?}",
                    t.dims()
                )));
            }
        }
        Ok(Denoiser { cfg, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn p(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name)
    }

    fn attn_weights(&self, prefix: &str) -> Result<AttentionWeights<'_>> {
        Ok(AttentionWeights {
            q: self.p(&format!("{prefix}.q.w"))?,
            k: self.p(&format!("{prefix}.k.w"))?,
            v: self.p(&format!("{prefix}.v.w"))?,
            o: self.p(&format!("{prefix}.o.w"))?,
            o_bias: Some(self.p(&format!("{prefix}.o.b"))?),
            heads: self.cfg.heads,
        })
    }

    fn time_embedding(&self, ts: &[usize]) -> Result<Tensor> {
        let e = timestep_embedding(ts, self.cfg.width, self.dtype())?;
        let h = linear(&e, &self.params, "time.l1")?.silu()?;
        Ok(linear(&h, &self.params, "time.l2")?.silu()?)
    }

    fn res_block(&self, x: &Tensor, temb: &Tensor, name: &str) -> Result<Tensor> {
        let g = self.cfg.groups;
        let h = group_norm(x, g, &self.params, &format!("{name}.gn1"))?.silu()?;
        let h = conv2d(&h, &self.params, &format!("{name}.conv1"), 1)?;
        let tb = linear(temb, &self.params, &format!("{name}.temb"))?;
        let h = h.broadcast_add(&tb.unsqueeze(2)?.unsqueeze(3)?)?;
        let h = group_norm(&h, g, &self.params, &format!("{name}.gn2"))?.silu()?;
        let h = conv2d(&h, &self.params, &format!("{name}.conv2"), 1)?;
        Ok((x + h)?)
    }

    fn res_level(&self, mut h: Tensor, temb: &Tensor, level: &str) -> Result<Tensor> {
        for i in 0..self.cfg.res_blocks {
            h = self.res_block(&h, temb, &format!("{level}.res{i}"))?;
        }
        Ok(h)
    }

    fn attention_stage(&self, k: usize, h: Tensor, pass: &mut Pass) -> Result<Tensor> {
        let (n_img, c, hh, ww) = h.dims4()?;
        let n = hh * ww;
        let tokens = h.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
        let st = format!("stage{k}");
        let mv = self.attn_weights(&format!("{st}.mv"))?;
        let ln_mv = format!("{st}.mv.ln");
        let out = match pass {
            Pass::Reference { cache } => {
                cache.push(RefLevel { stage: k, tokens: tokens.clone() });
                let z = tokens.unsqueeze(1)?;
                let z = (&z + multiview_attention(&layer_norm(&z, &self.params, &ln_mv)?, &mv)?)?;
                z.squeeze(1)?
            }
            Pass::Generate { batch, views, refs } => {
                let (b, v) = (*batch, *views);
                let z = tokens
                    .reshape((b, v, LANES, n, c))?
                    .permute((0, 2, 1, 3, 4))?
                    .contiguous()?
                    .reshape((b * LANES, v, n, c))?;
                let z = (&z + multiview_attention(&layer_norm(&z, &self.params, &ln_mv)?, &mv)?)?;
                let z = z.reshape((b, LANES, v * n, c))?;
                let albedo = z.narrow(1, 0, 1)?.squeeze(1)?;
                let mr = z.narrow(1, 1, 1)?.squeeze(1)?;

                let level = refs.level(k)?;
                let ref_tokens = RefLevel {
                    stage: k,
                    tokens: layer_norm(&level.tokens, &self.params, &format!("{st}.ref.ref_ln"))?,
                };
                let ra = self.attn_weights(&format!("{st}.ref"))?;
                let ln_ref = format!("{st}.ref.ln");
                let attn_albedo =
                    reference_cross_attention(&layer_norm(&albedo, &self.params, &ln_ref)?, k, &ref_tokens, &ra)?;
                let albedo = (&albedo + &attn_albedo)?;
                let mr = if self.cfg.mcaa {
                    mcaa_inject(&mr, &attn_albedo)?
                } else {
                    let attn_mr =
                        reference_cross_attention(&layer_norm(&mr, &self.params, &ln_ref)?, k, &ref_tokens, &ra)?;
                    (&mr + attn_mr)?
                };

                let ea = self.attn_weights(&format!("{st}.emb"))?;
                let ln_emb = format!("{st}.emb.ln");
                let mut lanes = Vec::with_capacity(LANES);
                for (lane, x) in [(Lane::Albedo, albedo), (Lane::Mr, mr)] {
                    let emb = self.p(&embedding_name(lane))?;
                    let y = material_embedding_attention(&layer_norm(&x, &self.params, &ln_emb)?, emb, &ea)?;
                    lanes.push((x + y)?);
                }
                Tensor::stack(&lanes, 1)?
                    .reshape((b, LANES, v, n, c))?
                    .permute((0, 2, 1, 3, 4))?
                    .contiguous()?
                    .reshape((n_img, n, c))?
            }
        };
        Ok(out.transpose(1, 2)?.contiguous()?.reshape((n_img, c, hh, ww))?)
    }

    fn trunk(&self, x: &Tensor, temb: &Tensor, pass: &mut Pass) -> Result<Option<Tensor>> {
        let h = conv2d(x, &self.params, "stem", 1)?;
        let s0 = self.res_level(h, temb, "enc0")?;
        let h = conv2d(&space_to_depth(&s0)?, &self.params, "down1", 1)?;
        let h = self.res_level(h, temb, "enc1")?;
        let s1 = self.attention_stage(0, h, pass)?;
        let h = conv2d(&space_to_depth(&s1)?, &self.params, "down2", 1)?;
        let h = self.res_level(h, temb, "mid")?;
        let h = self.attention_stage(1, h, pass)?;
        let h = conv2d(&Tensor::cat(&[upsample2x(&h)?, s1], 1)?, &self.params, "up1", 1)?;
        let h = self.res_level(h, temb, "dec1")?;
        if let Pass::Reference { cache } = pass {
            let tokens = h.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
            cache.push(RefLevel { stage: 2, tokens });
            return Ok(None);
        }
        let h = self.attention_stage(2, h, pass)?;
        let h = conv2d(&Tensor::cat(&[upsample2x(&h)?, s0], 1)?, &self.params, "up2", 1)?;
        let h = self.res_level(h, temb, "dec0")?;
        let h = group_norm(&h, self.cfg.groups, &self.params, "out.gn")?.silu()?;
        Ok(Some(conv2d(&h, &self.params, "out.conv", 1)?))
    }

    fn patchify(&self, x: &Tensor) -> Result<Tensor> {
        if self.cfg.patch == 2 {
            space_to_depth(x)
        } else {
            Ok(x.clone())
        }
    }

    /// Runs the shared backbone over clean reference images `(B, 3, H, W)`
    /// (values in [-1, 1]) and caches the tokens entering each attention stage.
    pub fn reference_features(&self, reference: &Tensor) -> Result<ReferenceFeatures> {
        let (b, c, h, w) = reference.dims4()?;
        let r = self.cfg.resolution;
        if c != LANE_CHANNELS || h != r || w != r {
            return Err(Error::invalid(format!(
                "reference must be (B, {LANE_CHANNELS}, {r}, {r}), got {:?}",
                reference.dims()
            )));
        }
        let reference = reference.to_dtype(self.dtype())?;
        let zeros = Tensor::zeros((b, self.cfg.geometry_channels, h, w), self.dtype(), &Device::Cpu)?;
        let x = self.patchify(&Tensor::cat(&[reference, zeros], 1)?)?;
        let temb = self.time_embedding(&vec![0; b])?;
        let mut pass = Pass::Reference { cache: Vec::new() };
        self.trunk(&x, &temb, &mut pass)?;
        let Pass::Reference { cache } = pass else { unreachable!() };
        Ok(ReferenceFeatures { batch: b, levels: cache })
    }

    /// Predicts the noise for `z_t` of shape `(B, views, 2, 3, H, W)` given one
    /// timestep per batch entry and geometry maps `(B, views, G, H, W)`.
    pub fn forward(&self, z_t: &Tensor, t: &[usize], geometry: &Tensor, refs: &ReferenceFeatures) -> Result<Tensor> {
        let dims = z_t.dims();
        let r = self.cfg.resolution;
        if dims.len() != 6 || dims[2] != LANES || dims[3] != LANE_CHANNELS || dims[4] != r || dims[5] != r {
            return Err(Error::invalid(format!(
                "latent must be (B, views, {LANES}, {LANE_CHANNELS}, {r}, {r}), got {dims:?}"
            )));
        }
        let (b, v) = (dims[0], dims[1]);
        if v == 0 {
            return Err(Error::invalid("latent has no views"));
        }
        let g = self.cfg.geometry_channels;
        if geometry.dims() != [b, v, g, r, r] {
            return Err(Error::invalid(format!(
                "geometry must be ({b}, {v}, {g}, {r}, {r}), got {:?}",
                geometry.dims()
            )));
        }
        if t.len() != b {
            return Err(Error::invalid(format!("expected {b} timesteps, got {}", t.len())));
        }
        if refs.batch != b {
            return Err(Error::invalid(format!(
                "reference batch {} does not match latent batch {b}",
                refs.batch
            )));
        }
        let n_img = b * v * LANES;
        let z = z_t.to_dtype(self.dtype())?.reshape((n_img, LANE_CHANNELS, r, r))?;
        let geo = geometry
            .to_dtype(self.dtype())?
            .unsqueeze(2)?
            .broadcast_as((b, v, LANES, g, r, r))?
            .contiguous()?
            .reshape((n_img, g, r, r))?;
        let x = self.patchify(&Tensor::cat(&[z, geo], 1)?)?;
        let temb = self.time_embedding(t)?;
        let td = temb.dim(1)?;
        let temb = temb
            .unsqueeze(1)?
            .broadcast_as((b, v * LANES, td))?
            .contiguous()?
            .reshape((n_img, td))?;
        let mut pass = Pass::Generate { batch: b, views: v, refs };
        let out = self.trunk(&x, &temb, &mut pass)?.expect("generation pass yields output");
        let out = if self.cfg.patch == 2 { depth_to_space(&out)? } else { out };
        Ok(out.reshape((b, v, LANES, LANE_CHANNELS, r, r))?)
    }
}
