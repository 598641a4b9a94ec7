use rand::Rng;

use super::grid::{view_key, Candidate, CandidateSet, GridConfig};
use super::pairs::{sample_reference_pair, PairSamplerConfig, ReferencePair};
use crate::error::{Error, Result};
use crate::render::camera::wrap_degrees;
use crate::render::{self, CameraPose, GeometryMaps, MaterialMaps, Raster, SceneSpec};

/// Ground-truth maps and geometry of one target view.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetView {
    pub pose: CameraPose,
    pub maps: MaterialMaps,
    pub geometry: GeometryMaps,
}

/// Anything that can serve target views and candidate images: the on-disk
/// dataset, or a renderer working from scene specs.
pub trait ViewSource: Sync {
    fn grid(&self) -> &GridConfig;
    fn scene_count(&self) -> usize;
    fn candidates(&self, scene: usize) -> Result<&CandidateSet>;
    fn target(&self, scene: usize, elevation: f64, azimuth: f64) -> Result<TargetView>;
    fn image(&self, scene: usize, cand: &Candidate) -> Result<Raster>;
    fn spec(&self, scene: usize) -> Result<&SceneSpec>;
}

/// One training example: the target views of one elevation plus a reference pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub scene: usize,
    pub elevation: f64,
    pub targets: Vec<TargetView>,
    pub pair: ReferencePair,
    pub references: [Raster; 2],
    pub reference_views: [Candidate; 2],
}

/// Azimuths of `n` uniformly spaced targets starting at `offset`.
pub fn target_azimuths(offset: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| wrap_degrees(offset + k as f64 * 360.0 / n as f64)).collect()
}

/// Every azimuth a target view can land on: candidate-grid offsets plus
/// multiples of `360 / n`.
pub fn target_azimuth_set(grid: &GridConfig) -> Vec<f64> {
    let mut set: Vec<f64> = Vec::new();
    for off in grid.azimuth_values() {
        for a in target_azimuths(off, grid.target_views) {
            if !set.iter().any(|&b| view_key(0.0, a) == view_key(0.0, b)) {
                set.push(a);
            }
        }
    }
    set.sort_by(|a, b| a.partial_cmp(b).unwrap());
    set
}

/// Picks a fixed elevation and a rotational offset on the azimuth grid
/// uniformly, loads the `target_views` uniformly spaced targets at that
/// elevation, and draws one reference pair.
pub fn assemble_training_sample<S: ViewSource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    scene: usize,
    pair_cfg: &PairSamplerConfig,
    rng: &mut R,
) -> Result<TrainingSample> {
    let grid = source.grid();
    if grid.fixed_elevations.is_empty() {
        return Err(Error::invalid("targets need at least one fixed elevation"));
    }
    let elevation = grid.fixed_elevations[rng.gen_range(0..grid.fixed_elevations.len())];
    let offsets = grid.azimuth_values();
    let offset = offsets[rng.gen_range(0..offsets.len())];
    let targets = target_azimuths(offset, grid.target_views)
        .into_iter()
        .map(|az| source.target(scene, elevation, az))
        .collect::<Result<Vec<_>>>()?;
    let cands = source.candidates(scene)?;
    let pair = sample_reference_pair(cands, pair_cfg, rng)?;
    let (a, b) = pair.resolve(cands);
    let references = [source.image(scene, a)?, source.image(scene, b)?];
    Ok(TrainingSample {
        scene,
        elevation,
        targets,
        pair,
        references,
        reference_views: [a.clone(), b.clone()],
    })
}

/// Renders views on demand from scene specs; no files involved.
pub struct RenderSource {
    pub grid: GridConfig,
    pub scenes: Vec<SceneSpec>,
    candidates: Vec<CandidateSet>,
}

impl RenderSource {
    pub fn new(scenes: Vec<SceneSpec>, grid: GridConfig) -> Result<Self> {
        let candidates = scenes
            .iter()
            .map(|s| super::grid::build_candidate_grid(s, &grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(RenderSource {
            grid,
            scenes,
            candidates,
        })
    }

    fn scene(&self, scene: usize) -> Result<&SceneSpec> {
        self.scenes
            .get(scene)
            .ok_or_else(|| Error::integrity(format!("no scene {scene}")))
    }
}

impl ViewSource for RenderSource {
    fn grid(&self) -> &GridConfig {
        &self.grid
    }

    fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    fn candidates(&self, scene: usize) -> Result<&CandidateSet> {
        self.candidates
            .get(scene)
            .ok_or_else(|| Error::integrity(format!("no scene {scene}")))
    }

    fn target(&self, scene: usize, elevation: f64, azimuth: f64) -> Result<TargetView> {
        let pose = CameraPose::new(elevation, azimuth)?;
        let (maps, geometry) = render::render_maps_and_geometry(self.scene(scene)?, &pose, self.grid.resolution)?;
        Ok(TargetView { pose, maps, geometry })
    }

    fn image(&self, scene: usize, cand: &Candidate) -> Result<Raster> {
        Ok(render::render_view(self.scene(scene)?, &cand.pose, &cand.lighting, self.grid.resolution)?.rgb)
    }

    fn spec(&self, scene: usize) -> Result<&SceneSpec> {
        self.scene(scene)
    }
}
