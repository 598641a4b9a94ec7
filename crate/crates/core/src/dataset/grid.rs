use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::camera::wrap_degrees;
use crate::render::{CameraPose, LightingCondition, SceneSpec};
use crate::seed::{rng_for, streams};

/// Camera/lighting grid of the per-object candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Fixed camera elevations, each rendered under every environment preset.
    pub fixed_elevations: Vec<f64>,
    /// Azimuths per elevation, uniformly spaced from 0.
    pub azimuths: usize,
    /// Environment presets per fixed-elevation pose.
    pub env_presets: usize,
    /// Adds one random-elevation pose per azimuth, lit by one point light.
    pub random_tier: bool,
    pub random_elevation_range: [f64; 2],
    pub light_elevations: Vec<f64>,
    pub light_azimuths: Vec<f64>,
    pub resolution: usize,
    /// Uniformly spaced target views per training sample.
    pub target_views: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            fixed_elevations: vec![-20.0, 0.0, 20.0],
            azimuths: 24,
            env_presets: 3,
            random_tier: true,
            random_elevation_range: [-30.0, 45.0],
            light_elevations: vec![-30.0, 0.0, 30.0],
            light_azimuths: vec![-45.0, 0.0, 45.0],
            resolution: 32,
            target_views: 6,
        }
    }
}

/// Stable text form of an angle, used in view keys.
pub fn format_angle(a: f64) -> String {
    let r = (a * 1e4).round() / 1e4 + 0.0;
    format!("{r}")
}

pub fn view_key(elevation: f64, azimuth: f64) -> String {
    format!("e{}_a{}", format_angle(elevation), format_angle(azimuth))
}

/// Circular distance between two azimuths, in degrees.
pub fn azimuth_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.azimuths < 2 {
            return Err(Error::invalid(format!("need at least 2 azimuths, got {}", self.azimuths)));
        }
        if self.env_presets > crate::render::light::ENV_PRESET_COUNT {
            return Err(Error::invalid(format!(
                "only {} environment presets exist",
                crate::render::light::ENV_PRESET_COUNT
            )));
        }
        if self.random_tier && (self.light_elevations.is_empty() || self.light_azimuths.is_empty()) {
            return Err(Error::invalid("random tier needs light angle sets"));
        }
        if self.target_views == 0 {
            return Err(Error::invalid("target_views must be positive"));
        }
        let [lo, hi] = self.random_elevation_range;
        if !(lo <= hi && lo >= -90.0 && hi <= 90.0) {
            return Err(Error::invalid("random elevation range must lie in [-90, 90]"));
        }
        Ok(())
    }

    pub fn azimuth_step(&self) -> f64 {
        360.0 / self.azimuths as f64
    }

    pub fn azimuth_values(&self) -> Vec<f64> {
        (0..self.azimuths).map(|k| k as f64 * self.azimuth_step()).collect()
    }

    /// Closed-form candidate count: `F * A * E + A` (the last term only with the
    /// random tier).
    pub fn expected_count(&self) -> usize {
        self.fixed_elevations.len() * self.azimuths * self.env_presets
            + if self.random_tier { self.azimuths } else { 0 }
    }
}

/// One candidate image: a camera pose and the light it is rendered under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub view: String,
    pub pose: CameraPose,
    pub lighting: LightingCondition,
}

impl Candidate {
    pub fn image_file(&self) -> String {
        format!("rgb_{}.png", self.lighting.tag())
    }
}

/// Ordered candidate images of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub entries: Vec<Candidate>,
    pub azimuth_step: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn point_tier(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].lighting.is_point()).collect()
    }

    pub fn env_tier(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| !self.entries[i].lighting.is_point()).collect()
    }

    /// Indices whose azimuth equals that of `anchor` or is one grid step away.
    pub fn azimuth_neighbors(&self, anchor: usize) -> Vec<usize> {
        let a = self.entries[anchor].pose.azimuth;
        let tol = 1e-6;
        (0..self.entries.len())
            .filter(|&i| {
                let d = azimuth_distance(self.entries[i].pose.azimuth, a);
                d < tol || (d - self.azimuth_step).abs() < tol
            })
            .collect()
    }
}

/// Enumerates the candidate set of `scene`. Fixed elevations come first
/// (elevation-major, then azimuth, then preset), followed by the random tier.
/// Random elevations and point-light angles are drawn from a stream keyed by
/// the scene seed, so the set is a pure function of its inputs.
pub fn build_candidate_grid(scene: &SceneSpec, grid: &GridConfig) -> Result<CandidateSet> {
    grid.validate()?;
    let mut entries = Vec::with_capacity(grid.expected_count());
    for &elev in &grid.fixed_elevations {
        for az in grid.azimuth_values() {
            let pose = CameraPose::new(elev, az)?;
            for env in 0..grid.env_presets {
                entries.push(Candidate {
                    view: view_key(elev, pose.azimuth),
                    pose,
                    lighting: LightingCondition::env(env as u8),
                });
            }
        }
    }
    if grid.random_tier {
        let mut rng = rng_for(scene.seed, streams::GRID);
        let [lo, hi] = grid.random_elevation_range;
        for az in grid.azimuth_values() {
            let mut elev = (rng.gen_range(lo..=hi) * 10.0).round() / 10.0 + 0.0;
            // keep view directories distinct from the fixed tier
            while grid.fixed_elevations.iter().any(|&f| (f - elev).abs() < 1e-9) {
                elev += 0.1;
            }
            let pose = CameraPose::new(elev, wrap_degrees(az))?;
            let le = grid.light_elevations[rng.gen_range(0..grid.light_elevations.len())];
            let la = grid.light_azimuths[rng.gen_range(0..grid.light_azimuths.len())];
            entries.push(Candidate {
                view: view_key(elev, pose.azimuth),
                pose,
                lighting: LightingCondition::point(le, la),
            });
        }
    }
    Ok(CandidateSet {
        entries,
        azimuth_step: grid.azimuth_step(),
    })
}
