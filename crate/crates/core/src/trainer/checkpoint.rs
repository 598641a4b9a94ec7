//! Single-file checkpoint: magic, version, JSON header, then raw
//! little-endian tensors in header order.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::config::{Precision, TrainConfig};
use super::optim::AdamW;
use crate::denoiser::{Denoiser, DenoiserConfig, ParamStore};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MMVPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: Group,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    schedule: NoiseSchedule,
    step: usize,
    adam_t: usize,
    tensors: Vec<TensorEntry>,
}

/// Weights, configuration, schedule and optimizer state at one step.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub step: usize,
    pub params: ParamStore,
    pub adam_t: usize,
    pub adam_m: BTreeMap<String, Tensor>,
    pub adam_v: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn denoiser(&self) -> Result<Denoiser> {
        Denoiser::from_params(self.config.effective_model(), self.params.deep_clone()?)
    }

    pub fn model_config(&self) -> DenoiserConfig {
        self.config.effective_model()
    }

    /// Errors unless the stored model config equals `expected`.
    pub fn ensure_compatible(&self, expected: &DenoiserConfig) -> Result<()> {
        let have = self.model_config();
        if &have != expected {
            return Err(Error::CheckpointIncompatible(format!(
                "checkpoint model config {have:?} differs from expected {expected:?}"
            )));
        }
        Ok(())
    }

    /// Errors unless the checkpoint was trained for this view count and resolution.
    pub fn ensure_views(&self, n_views: usize, resolution: usize) -> Result<()> {
        let m = self.model_config();
        if m.n_views != n_views || m.resolution != resolution {
            return Err(Error::CheckpointIncompatible(format!(
                "checkpoint expects {} views at {}px, data has {n_views} views at {resolution}px",
                m.n_views, m.resolution
            )));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        let c = &self.config;
        let mut o = AdamW::new(c.learning_rate, c.warmup_steps, c.weight_decay, c.grad_clip);
        o.t = self.adam_t;
        o.m = self.adam_m.clone();
        o.v = self.adam_v.clone();
        o
    }
}

fn tensor_bytes(t: &Tensor, dtype: DType, out: &mut Vec<u8>) -> Result<()> {
    let flat = t.flatten_all()?;
    match dtype {
        DType::F32 => flat.to_dtype(DType::F32)?.to_vec1::<f32>()?.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        _ => flat.to_dtype(DType::F64)?.to_vec1::<f64>()?.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let dtype = ckpt.config.precision.dtype();
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    for (name, var) in ckpt.params.iter() {
        entries.push(TensorEntry { name: name.to_string(), group: Group::Param, shape: var.dims().to_vec() });
        tensor_bytes(var.as_tensor(), dtype, &mut payload)?;
    }
    for (group, map) in [(Group::AdamM, &ckpt.adam_m), (Group::AdamV, &ckpt.adam_v)] {
        for (name, t) in map {
            entries.push(TensorEntry { name: name.clone(), group: group.clone(), shape: t.dims().to_vec() });
            tensor_bytes(t, dtype, &mut payload)?;
        }
    }
    let header = Header {
        config: ckpt.config.clone(),
        schedule: ckpt.schedule.clone(),
        step: ckpt.step,
        adam_t: ckpt.adam_t,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(json.len() + payload.len() + 20);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let incompatible = |m: &str| Error::CheckpointIncompatible(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(incompatible("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointIncompatible(format!(
            "checkpoint version {version}, supported {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(Error::integrity("checkpoint header truncated"));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| Error::CheckpointIncompatible(format!("checkpoint header: {e}")))?;
    let dtype = header.config.precision.dtype();
    let width = match header.config.precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let mut data = &body[hlen..];
    let mut params = ParamStore::new(dtype);
    let mut adam_m = BTreeMap::new();
    let mut adam_v = BTreeMap::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if data.len() < n * width {
            return Err(Error::integrity(format!("checkpoint payload truncated at {}", e.name)));
        }
        let (chunk, rest) = data.split_at(n * width);
        data = rest;
        let t = match header.config.precision {
            Precision::F32 => {
                let v: Vec<f32> = chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
            }
            Precision::F64 => {
                let v: Vec<f64> = chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
            }
        };
        match e.group {
            Group::Param => params.insert(e.name.clone(), t)?,
            Group::AdamM => {
                adam_m.insert(e.name.clone(), t);
            }
            Group::AdamV => {
                adam_v.insert(e.name.clone(), t);
            }
        }
    }
    if !data.is_empty() {
        return Err(Error::integrity("trailing bytes after checkpoint payload"));
    }
    // Shape check against the stored config.
    let params = Denoiser::from_params(header.config.effective_model(), params)?.into_params();
    Ok(Checkpoint {
        config: header.config,
        schedule: header.schedule,
        step: header.step,
        params,
        adam_t: header.adam_t,
        adam_m,
        adam_v,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
