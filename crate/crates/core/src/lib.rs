//! Desk-scale multi-view PBR material diffusion.
//!
//! The crate covers the whole pipeline: procedural scenes rendered with a
//! metallic-roughness BRDF, a candidate-view grid with reference-pair
//! sampling, a discrete diffusion schedule, a dual-lane (albedo / MR)
//! multi-view denoiser with reference and material-embedding attention,
//! consistency-regularized training, and sampling plus evaluation metrics.

pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod render;
pub mod sampler_eval;
pub mod schedule;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
