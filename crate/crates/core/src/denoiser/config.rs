use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lanes of the latent, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    Albedo,
    Mr,
}

impl Lane {
    pub const ALL: [Lane; 2] = [Lane::Albedo, Lane::Mr];

    pub fn index(self) -> usize {
        match self {
            Lane::Albedo => 0,
            Lane::Mr => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Lane::Albedo => "albedo",
            Lane::Mr => "mr",
        }
    }
}

pub const LANES: usize = 2;
pub const LANE_CHANNELS: usize = 3;
pub const GEOMETRY_CHANNELS: usize = 6;
/// Attention-bearing stages: encoder 1/2, bottleneck 1/4, decoder 1/2.
pub const ATTENTION_STAGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Channels at full internal resolution; deeper levels use twice this.
    pub width: usize,
    /// Residual blocks per level.
    pub res_blocks: usize,
    pub heads: usize,
    pub n_views: usize,
    pub resolution: usize,
    /// Space-to-depth factor applied before the stem (1 or 2).
    pub patch: usize,
    pub geometry_channels: usize,
    pub embed_tokens: usize,
    pub embed_width: usize,
    pub groups: usize,
    /// Route the albedo reference attention into the MR lane. When off, the MR
    /// lane runs the same reference attention module on its own queries.
    pub mcaa: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            width: 16,
            res_blocks: 1,
            heads: 2,
            n_views: 6,
            resolution: 32,
            patch: 2,
            geometry_channels: GEOMETRY_CHANNELS,
            embed_tokens: 16,
            embed_width: 64,
            groups: 4,
            mcaa: true,
        }
    }
}

impl DenoiserConfig {
    /// Width of the attention-bearing levels.
    pub fn attn_width(&self) -> usize {
        self.width * 2
    }

    /// Per-head width `d` used in the attention scale.
    pub fn head_width(&self) -> usize {
        self.attn_width() / self.heads.max(1)
    }

    pub fn time_width(&self) -> usize {
        self.width * 4
    }

    pub fn internal_resolution(&self) -> usize {
        self.resolution / self.patch.max(1)
    }

    /// Token grid side at each attention stage.
    pub fn stage_side(&self, stage: usize) -> usize {
        match stage {
            1 => self.internal_resolution() / 4,
            _ => self.internal_resolution() / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.width % 2 != 0 {
            return bad(format!("width must be a positive even number, got {}", self.width));
        }
        if self.res_blocks == 0 {
            return bad("res_blocks must be at least 1".into());
        }
        if self.heads == 0 || self.attn_width() % self.heads != 0 {
            return bad(format!("heads {} must divide attention width {}", self.heads, self.attn_width()));
        }
        if self.n_views == 0 {
            return bad("n_views must be at least 1".into());
        }
        if !matches!(self.patch, 1 | 2) {
            return bad(format!("patch must be 1 or 2, got {}", self.patch));
        }
        if self.resolution == 0 || self.resolution % (self.patch * 4) != 0 {
            return bad(format!("resolution {} must be a multiple of {}", self.resolution, self.patch * 4));
        }
        if self.geometry_channels == 0 {
            return bad("geometry_channels must be positive".into());
        }
        if self.embed_tokens == 0 || self.embed_width == 0 {
            return bad("material embeddings must be non-empty".into());
        }
        if self.groups == 0 || self.width % self.groups != 0 {
            return bad(format!("groups {} must divide width {}", self.groups, self.width));
        }
        Ok(())
    }
}
