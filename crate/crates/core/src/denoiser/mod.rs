//! Dual-lane multi-view denoiser.

pub mod attention;
pub mod config;
pub mod layers;
pub mod model;
pub mod params;

pub use attention::{
    attend, material_embedding_attention, mcaa_inject, multiview_attention, multiview_attention_views,
    reference_cross_attention, scaled_dot_attention, softmax_last, AttentionWeights, RefLevel,
};
pub use config::{DenoiserConfig, Lane, ATTENTION_STAGES, GEOMETRY_CHANNELS, LANES, LANE_CHANNELS};
pub use model::{embedding_name, param_count, Denoiser, ReferenceFeatures};
pub use params::ParamStore;
