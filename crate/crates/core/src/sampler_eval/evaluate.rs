use serde::{Deserialize, Serialize};

use super::metrics::{alignment_score, cross_view_consistency_score, illumination_invariance_score, masked_mae};
use super::sample::{sample_multiview_batch, SamplerConfig};
use crate::dataset::grid::view_key;
use crate::dataset::sample::target_azimuths;
use crate::dataset::store::scene_id;
use crate::dataset::{TargetView, ViewSource};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::render::{self, CameraPose, LightingCondition, MaterialMaps, Raster};
use crate::schedule::NoiseSchedule;
use crate::seed::{rng_for, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub sampler: SamplerConfig,
    /// Elevation shared by the targets and the reference.
    pub elevation: f64,
    /// Azimuth of the first target view.
    pub target_offset: f64,
    pub reference_azimuth: f64,
    /// Reference lightings; the first is the primary reference.
    pub lightings: Vec<LightingCondition>,
    /// Match radius for cross-view consistency, as a fraction of the
    /// object's bounding-box diagonal.
    pub match_fraction: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sampler: SamplerConfig::default(),
            elevation: 0.0,
            target_offset: 0.0,
            reference_azimuth: 0.0,
            lightings: vec![
                LightingCondition::env(0),
                LightingCondition::env(1),
                LightingCondition::env(2),
                LightingCondition::point(30.0, 45.0),
                LightingCondition::point(-30.0, -45.0),
            ],
            match_fraction: 0.01,
            seed: 0,
        }
    }
}

/// Predictions for one scene, one row per reference lighting.
#[derive(Debug, Clone)]
pub struct ScenePrediction {
    pub scene: usize,
    pub scene_id: String,
    pub bbox_diagonal: f64,
    pub lightings: Vec<LightingCondition>,
    pub references: Vec<Raster>,
    pub targets: Vec<TargetView>,
    /// `preds[lighting][view]`
    pub preds: Vec<Vec<MaterialMaps>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScores {
    pub scene: String,
    pub albedo_mae: f64,
    pub mr_mae: f64,
    /// Albedo MAE of a constant 0.5 prediction.
    pub baseline_albedo_mae: f64,
    pub illumination_invariance: f64,
    pub cross_view_consistency: Option<f64>,
    pub alignment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub albedo_mae: f64,
    pub mr_mae: f64,
    pub baseline_albedo_mae: f64,
    pub illumination_invariance_score: f64,
    pub cross_view_consistency_score: f64,
    pub alignment_score: f64,
    pub per_scene: Vec<SceneScores>,
}

/// Reference image of `scene` at `pose` under `lighting`: the stored candidate
/// when one exists, otherwise a fresh render.
pub fn reference_image<S: ViewSource + ?Sized>(source: &S, scene: usize, pose: &CameraPose, lighting: &LightingCondition) -> Result<Raster> {
    let key = view_key(pose.elevation, pose.azimuth);
    let tag = lighting.tag();
    if let Some(c) = source.candidates(scene)?.entries.iter().find(|c| c.view == key && c.lighting.tag() == tag) {
        return source.image(scene, c);
    }
    Ok(render::render_view(source.spec(scene)?, pose, lighting, source.grid().resolution)?.rgb)
}

/// Target views used for evaluation.
pub fn eval_targets<S: ViewSource + ?Sized>(source: &S, scene: usize, cfg: &EvalConfig) -> Result<Vec<TargetView>> {
    target_azimuths(cfg.target_offset, source.grid().target_views)
        .into_iter()
        .map(|az| source.target(scene, cfg.elevation, az))
        .collect()
}

/// Samples every view of `scene` once per configured lighting. The sampling
/// seed depends only on the scene index, never on its position in a list.
pub fn predict_scene<S: ViewSource + ?Sized>(
    model: &Denoiser,
    sched: &NoiseSchedule,
    source: &S,
    scene: usize,
    cfg: &EvalConfig,
) -> Result<ScenePrediction> {
    if cfg.lightings.is_empty() {
        return Err(Error::invalid("evaluation needs at least one reference lighting"));
    }
    let targets = eval_targets(source, scene, cfg)?;
    let pose = CameraPose::new(cfg.elevation, cfg.reference_azimuth)?;
    let references = cfg
        .lightings
        .iter()
        .map(|l| reference_image(source, scene, &pose, l))
        .collect::<Result<Vec<_>>>()?;
    let geometry: Vec<_> = targets.iter().map(|t| t.geometry.clone()).collect();
    let mut rng = rng_for(cfg.seed, streams::EVAL + ((scene as u64) << 8));
    let preds = sample_multiview_batch(model, sched, &geometry, &references, &cfg.sampler, &mut rng)?;
    Ok(ScenePrediction {
        scene,
        scene_id: scene_id(scene),
        bbox_diagonal: source.spec(scene)?.primitive.bbox_diagonal(),
        lightings: cfg.lightings.clone(),
        references,
        targets,
        preds,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scores one scene. MAE and alignment average over every lighting and view;
/// cross-view consistency averages over lightings; views or lightings where a
/// score is undefined are skipped, and the scene entry is `None` when none is
/// defined.
pub fn score_scene(pred: &ScenePrediction, match_fraction: f64) -> Result<SceneScores> {
    let geometry: Vec<_> = pred.targets.iter().map(|t| t.geometry.clone()).collect();
    let mut albedo = Vec::new();
    let mut mr = Vec::new();
    let mut baseline = Vec::new();
    let mut align = Vec::new();
    let mut cross = Vec::new();
    for maps in &pred.preds {
        if maps.len() != pred.targets.len() {
            return Err(Error::invalid("prediction count differs from target count"));
        }
        for (m, t) in maps.iter().zip(&pred.targets) {
            albedo.push(masked_mae(&m.albedo, &t.maps.albedo, &t.geometry.mask, &[0, 1, 2])?);
            mr.push(masked_mae(&m.mr, &t.maps.mr, &t.geometry.mask, &[1, 2])?);
            match alignment_score(&m.albedo, &m.mr, Some(&t.geometry.mask)) {
                Ok(s) => align.push(s),
                Err(Error::UndefinedScore(_)) => {}
                Err(e) => return Err(e),
            }
        }
        match cross_view_consistency_score(maps, &geometry, match_fraction * pred.bbox_diagonal) {
            Ok(s) => cross.push(s),
            Err(Error::UndefinedScore(_)) => {}
            Err(e) => return Err(e),
        }
    }
    for t in &pred.targets {
        let mut grey = t.maps.albedo.clone();
        grey.data.iter_mut().for_each(|v| *v = 0.5);
        baseline.push(masked_mae(&grey, &t.maps.albedo, &t.geometry.mask, &[0, 1, 2])?);
    }
    let illumination_invariance = if pred.preds.len() >= 2 {
        illumination_invariance_score(&pred.preds, &geometry)?
    } else {
        0.0
    };
    Ok(SceneScores {
        scene: pred.scene_id.clone(),
        albedo_mae: mean(&albedo),
        mr_mae: mean(&mr),
        baseline_albedo_mae: mean(&baseline),
        illumination_invariance,
        cross_view_consistency: (!cross.is_empty()).then(|| mean(&cross)),
        alignment: (!align.is_empty()).then(|| mean(&align)),
    })
}

/// Totals are plain means of the per-scene entries (over defined entries for
/// the optional scores).
pub fn aggregate(per_scene: Vec<SceneScores>) -> Result<EvalReport> {
    if per_scene.is_empty() {
        return Err(Error::invalid("no scenes to aggregate"));
    }
    let col = |f: &dyn Fn(&SceneScores) -> f64| mean(&per_scene.iter().map(f).collect::<Vec<_>>());
    let opt = |f: &dyn Fn(&SceneScores) -> Option<f64>, name: &str| -> Result<f64> {
        let v: Vec<f64> = per_scene.iter().filter_map(f).collect();
        if v.is_empty() {
            return Err(Error::UndefinedScore(format!("{name} undefined on every scene")));
        }
        Ok(mean(&v))
    };
    Ok(EvalReport {
        albedo_mae: col(&|s| s.albedo_mae),
        mr_mae: col(&|s| s.mr_mae),
        baseline_albedo_mae: col(&|s| s.baseline_albedo_mae),
        illumination_invariance_score: col(&|s| s.illumination_invariance),
        cross_view_consistency_score: opt(&|s| s.cross_view_consistency, "cross-view consistency")?,
        alignment_score: opt(&|s| s.alignment, "alignment")?,
        per_scene,
    })
}

/// Samples and scores every scene in `scenes`.
pub fn evaluate<S: ViewSource + ?Sized>(
    model: &Denoiser,
    sched: &NoiseSchedule,
    source: &S,
    scenes: &[usize],
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<ScenePrediction>)> {
    if scenes.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let mut preds = Vec::with_capacity(scenes.len());
    let mut scores = Vec::with_capacity(scenes.len());
    for &s in scenes {
        let p = predict_scene(model, sched, source, s, cfg)?;
        scores.push(score_scene(&p, cfg.match_fraction)?);
        log::debug!("scored {}", p.scene_id);
        preds.push(p);
    }
    Ok((aggregate(scores)?, preds))
}
