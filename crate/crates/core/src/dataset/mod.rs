//! Candidate-view grids, reference-pair sampling, training-sample assembly
//! and dataset persistence.

pub mod grid;
pub mod pairs;
pub mod sample;
pub mod store;

pub use grid::{build_candidate_grid, Candidate, CandidateSet, GridConfig};
pub use pairs::{sample_reference_pair, PairSamplerConfig, ReferencePair};
pub use sample::{assemble_training_sample, RenderSource, TargetView, TrainingSample, ViewSource};
pub use store::{read_dataset, write_dataset, Dataset, DatasetIndex, Split};

use crate::render::{make_scene, SceneSpec};
use crate::seed::{derive_seed, streams};

/// `n` procedural scenes drawn from `seed`. Scene `i` depends only on
/// `(seed, i)`, so growing `n` keeps the earlier scenes.
pub fn generate_scenes(seed: u64, n: usize) -> Vec<SceneSpec> {
    let base = derive_seed(seed, streams::SCENES);
    (0..n).map(|i| make_scene(derive_seed(base, i as u64))).collect()
}
