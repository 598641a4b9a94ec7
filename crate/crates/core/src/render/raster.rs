use serde::{Deserialize, Serialize};

use super::camera::CameraPose;
use super::light::LightingCondition;
use crate::error::{Error, Result};

/// 8-bit code to unit float. The single conversion used everywhere, so values
/// decoded from PNG files are bit-identical to values produced in memory.
pub fn u8_to_unit(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Nearest 8-bit code for a value in `[0, 1]` (clamped).
pub fn unit_to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Dense `height x width x channels` image in row-major HWC order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Raster {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "raster payload has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Raster {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn same_resolution(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * self.channels
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = self.index(row, col);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = self.index(row, col);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.index(row, col) + ch]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.channels)
    }

    /// Channel-major copy (`C x H x W`), the layout tensors use.
    pub fn to_chw(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for (p, px) in self.pixels().enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * hw + p] = *v;
            }
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, channels: usize, chw: &[f32]) -> Result<Self> {
        let hw = height * width;
        if chw.len() != hw * channels {
            return Err(Error::invalid("channel-major payload has the wrong length"));
        }
        let mut r = Raster::zeros(height, width, channels);
        for p in 0..hw {
            for c in 0..channels {
                r.data[p * channels + c] = chw[c * hw + p];
            }
        }
        Ok(r)
    }

    /// Snap every value to the 8-bit grid.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = u8_to_unit(unit_to_u8(*v));
        }
    }
}

/// Albedo plus packed metallic-roughness map (R = 0, G = roughness, B = metallic).
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialMaps {
    pub albedo: Raster,
    pub mr: Raster,
}

impl MaterialMaps {
    pub fn zeros(height: usize, width: usize) -> Self {
        MaterialMaps {
            albedo: Raster::zeros(height, width, 3),
            mr: Raster::zeros(height, width, 3),
        }
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.albedo.height, self.albedo.width)
    }
}

/// Per-view geometry: normals remapped to `[0, 1]`, canonical (object-space)
/// positions, and the coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryMaps {
    pub normal: Raster,
    pub position: Raster,
    pub mask: Raster,
}

impl GeometryMaps {
    pub fn zeros(height: usize, width: usize) -> Self {
        GeometryMaps {
            normal: Raster::zeros(height, width, 3),
            position: Raster::zeros(height, width, 3),
            mask: Raster::zeros(height, width, 1),
        }
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.mask.height, self.mask.width)
    }

    #[inline]
    pub fn covered(&self, row: usize, col: usize) -> bool {
        self.mask.get(row, col, 0) > 0.5
    }

    pub fn coverage(&self) -> usize {
        self.mask.data.iter().filter(|&&m| m > 0.5).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub rgb: Raster,
    pub geometry: GeometryMaps,
    pub pose: CameraPose,
    pub lighting: LightingCondition,
}
