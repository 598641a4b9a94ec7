//! Multi-view sampling and the evaluation suite.

pub mod evaluate;
pub mod metrics;
pub mod report;
pub mod sample;

pub use evaluate::{aggregate, evaluate, predict_scene, reference_image, score_scene, EvalConfig, EvalReport, ScenePrediction, SceneScores};
pub use metrics::{alignment_score, cross_view_consistency_score, illumination_invariance_score, masked_mae};
pub use report::{contact_sheet, format_report, parse_report, write_contact_sheet, write_report};
pub use sample::{latent_to_maps, run_chain, sample_multiview, sample_multiview_batch, EpsPredictor, ModelPredictor, SamplerConfig};
