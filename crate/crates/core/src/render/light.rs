use serde::{Deserialize, Serialize};

use super::camera::CameraPose;
use super::math::Vec3;
use crate::error::{Error, Result};

/// Distance of point lights from the origin, in scene units.
pub const POINT_LIGHT_DISTANCE: f64 = 4.0;
pub const DEFAULT_POINT_INTENSITY: f64 = 36.0;

/// A lighting condition. Point lights are placed relative to the camera:
/// `elevation`/`azimuth` are offsets in degrees from the camera direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LightingCondition {
    Point {
        elevation: f64,
        azimuth: f64,
        intensity: f64,
    },
    Env {
        env_id: u8,
    },
}

/// Fixed stand-in for an HDR environment: one directional light plus a
/// constant ambient term.
#[derive(Debug, Clone, Copy)]
pub struct EnvPreset {
    pub direction: Vec3,
    pub radiance: Vec3,
    pub ambient: Vec3,
}

pub fn env_presets() -> [EnvPreset; 3] {
    [
        EnvPreset {
            direction: Vec3::from_spherical_deg(40.0, 30.0),
            radiance: Vec3::new(2.2, 2.1, 2.0),
            ambient: Vec3::new(0.20, 0.20, 0.22),
        },
        EnvPreset {
            direction: Vec3::from_spherical_deg(15.0, 120.0),
            radiance: Vec3::new(2.6, 1.9, 1.2),
            ambient: Vec3::new(0.18, 0.12, 0.08),
        },
        EnvPreset {
            direction: Vec3::from_spherical_deg(65.0, 250.0),
            radiance: Vec3::new(1.3, 1.8, 2.6),
            ambient: Vec3::new(0.08, 0.12, 0.20),
        },
    ]
}

pub const ENV_PRESET_COUNT: usize = 3;

/// Incident light at a surface point.
#[derive(Debug, Clone, Copy)]
pub struct IncidentLight {
    pub direction: Vec3,
    pub radiance: Vec3,
}

impl LightingCondition {
    pub fn point(elevation: f64, azimuth: f64) -> Self {
        LightingCondition::Point {
            elevation,
            azimuth,
            intensity: DEFAULT_POINT_INTENSITY,
        }
    }

    pub fn env(env_id: u8) -> Self {
        LightingCondition::Env { env_id }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, LightingCondition::Point { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LightingCondition::Point { intensity, .. } if !(intensity >= 0.0) => {
                Err(Error::invalid("point light intensity must be >= 0"))
            }
            LightingCondition::Env { env_id } if env_id as usize >= ENV_PRESET_COUNT => {
                Err(Error::invalid(format!("unknown environment preset {env_id}")))
            }
            _ => Ok(()),
        }
    }

    /// File tag, e.g. `env0` or `pt_-30_45`.
    pub fn tag(&self) -> String {
        match *self {
            LightingCondition::Env { env_id } => format!("env{env_id}"),
            LightingCondition::Point { elevation, azimuth, .. } => format!("pt_{elevation}_{azimuth}"),
        }
    }

    /// Inverse of [`LightingCondition::tag`]; point lights get the default intensity.
    pub fn from_tag(tag: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unrecognized lighting tag {tag:?} (expected envN or pt_<elev>_<azim>)"));
        let light = if let Some(id) = tag.strip_prefix("env") {
            LightingCondition::env(id.parse().map_err(|_| bad())?)
        } else if let Some(rest) = tag.strip_prefix("pt_") {
            let (e, a) = rest.split_once('_').ok_or_else(bad)?;
            LightingCondition::point(e.parse().map_err(|_| bad())?, a.parse().map_err(|_| bad())?)
        } else {
            return Err(bad());
        };
        light.validate()?;
        Ok(light)
    }

    /// Direct light arriving at `p` and the ambient radiance, for a camera at `pose`.
    pub fn incident(&self, pose: &CameraPose, p: Vec3) -> (IncidentLight, Vec3) {
        match *self {
            LightingCondition::Env { env_id } => {
                let preset = env_presets()[env_id as usize];
                (
                    IncidentLight {
                        direction: preset.direction,
                        radiance: preset.radiance,
                    },
                    preset.ambient,
                )
            }
            LightingCondition::Point {
                elevation,
                azimuth,
                intensity,
            } => {
                let dir = Vec3::from_spherical_deg(
                    (pose.elevation + elevation).clamp(-89.0, 89.0),
                    pose.azimuth + azimuth,
                );
                let to_light = dir * POINT_LIGHT_DISTANCE - p;
                let dist2 = to_light.dot(to_light);
                (
                    IncidentLight {
                        direction: to_light.normalize(),
                        radiance: Vec3::splat(intensity / dist2),
                    },
                    Vec3::ZERO,
                )
            }
        }
    }
}
