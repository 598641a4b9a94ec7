use candle_core::DType;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dataset::PairSamplerConfig;
use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::schedule::{make_schedule, NoiseSchedule, ScheduleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub kind: ScheduleKind,
    pub zero_terminal_snr: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            kind: ScheduleKind::Linear,
            zero_terminal_snr: false,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        let s = make_schedule(self.steps, self.kind)?;
        Ok(if self.zero_terminal_snr { s.enforce_zero_terminal_snr() } else { s })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Consistency weight.
    pub lambda: f64,
    pub learning_rate: f64,
    /// Linear warm-up length in optimizer steps.
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub disable_consistency: bool,
    pub disable_mcaa: bool,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub precision: Precision,
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub pairs: PairSamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            learning_rate: 5e-5,
            warmup_steps: 100,
            batch_size: 1,
            steps: 2000,
            seed: 0,
            disable_consistency: false,
            disable_mcaa: false,
            weight_decay: 0.0,
            grad_clip: 1.0,
            checkpoint_every: 0,
            precision: Precision::F32,
            model: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            pairs: PairSamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings used for the desk-scale runs: a higher learning rate than the
    /// default.
    pub fn toy() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            ..TrainConfig::default()
        }
    }

    /// Consistency weight actually applied to the gradient.
    pub fn effective_lambda(&self) -> f64 {
        if self.disable_consistency {
            0.0
        } else {
            self.lambda
        }
    }

    /// Model config with the ablation flag applied.
    pub fn effective_model(&self) -> DenoiserConfig {
        DenoiserConfig {
            mcaa: self.model.mcaa && !self.disable_mcaa,
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return bad("weight_decay and grad_clip must be non-negative".into());
        }
        self.model.validate()?;
        self.pairs.validate()?;
        self.schedule.build().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: TrainConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file (or starts from defaults when `path` is `None`) and
    /// applies `key.path=value` overrides on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => toml::to_string(&TrainConfig::default()).map_err(|e| Error::Config(e.to_string()))?,
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Layered configuration: a TOML file (empty when `path` is `None`) with
/// `key.path=value` overrides on top, deserialized into `T`.
pub fn load_layered<T: serde::de::DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut value: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `a.b.c=value` inside a TOML document, creating tables as needed.
/// Unknown keys are left for deserialization to reject.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut cur = doc;
    for part in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-table")))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}
