use serde::{Deserialize, Serialize};

use super::math::Vec3;
use crate::error::{Error, Result};

pub const DEFAULT_RADIUS: f64 = 3.6;
pub const DEFAULT_FOV: f64 = 40.0;

/// Orbit camera looking at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub elevation: f64,
    pub azimuth: f64,
    pub radius: f64,
    pub fov: f64,
}

pub(crate) fn wrap_degrees(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

impl CameraPose {
    pub fn new(elevation: f64, azimuth: f64) -> Result<Self> {
        Self::with_lens(elevation, azimuth, DEFAULT_RADIUS, DEFAULT_FOV)
    }

    pub fn with_lens(elevation: f64, azimuth: f64, radius: f64, fov: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&elevation) {
            return Err(Error::invalid(format!("elevation {elevation} outside [-90, 90]")));
        }
        if !(radius > 0.0) || !(fov > 0.0 && fov < 180.0) {
            return Err(Error::invalid("camera radius and fov must be positive"));
        }
        Ok(CameraPose {
            elevation,
            azimuth: wrap_degrees(azimuth),
            radius,
            fov,
        })
    }

    pub fn eye(&self) -> Vec3 {
        Vec3::from_spherical_deg(self.elevation, self.azimuth) * self.radius
    }

    /// Orthonormal camera frame `(right, up, forward)`.
    pub fn frame(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (-self.eye()).normalize();
        let mut world_up = Vec3::new(0.0, 1.0, 0.0);
        if forward.cross(world_up).length() < 1e-9 {
            world_up = Vec3::new(0.0, 0.0, -forward.y.signum());
        }
        let right = forward.cross(world_up).normalize();
        let up = right.cross(forward);
        (right, up, forward)
    }

    /// Primary ray direction through the center of pixel `(row, col)`.
    pub fn ray_dir(&self, row: usize, col: usize, height: usize, width: usize) -> Vec3 {
        let (right, up, forward) = self.frame();
        let half = (self.fov.to_radians() * 0.5).tan();
        let aspect = width as f64 / height as f64;
        let x = ((col as f64 + 0.5) / width as f64 * 2.0 - 1.0) * half * aspect;
        let y = (1.0 - (row as f64 + 0.5) / height as f64 * 2.0) * half;
        (forward + right * x + up * y).normalize()
    }
}
