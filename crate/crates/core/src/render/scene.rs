//! Procedural scenes: one analytic primitive centered at the origin whose
//! surface is split into material regions by a spherical Voronoi partition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use super::brdf::MaterialParams;
use super::math::Vec3;
use super::raster::u8_to_unit;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Capsule aligned with the y axis.
    Capsule { radius: f64, half_length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    Sphere,
    Box,
    Capsule,
}

impl FromStr for PrimitiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(PrimitiveKind::Sphere),
            "box" => Ok(PrimitiveKind::Box),
            "capsule" => Ok(PrimitiveKind::Capsule),
            other => Err(Error::invalid(format!("unknown primitive kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::Sphere { .. } => PrimitiveKind::Sphere,
            Primitive::Box { .. } => PrimitiveKind::Box,
            Primitive::Capsule { .. } => PrimitiveKind::Capsule,
        }
    }

    /// Diagonal of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius } => 2.0 * radius * 3f64.sqrt(),
            Primitive::Box { half_extents: h } => 2.0 * Vec3::new(h[0], h[1], h[2]).length(),
            Primitive::Capsule { radius, half_length } => {
                2.0 * Vec3::new(radius, radius + half_length, radius).length()
            }
        }
    }

    /// Nearest intersection with `t > 0` of the ray `o + t d` (`d` unit).
    pub fn intersect(&self, o: Vec3, d: Vec3) -> Option<Hit> {
        match *self {
            Primitive::Sphere { radius } => sphere_hit(o, d, Vec3::ZERO, radius),
            Primitive::Box { half_extents } => box_hit(o, d, half_extents),
            Primitive::Capsule { radius, half_length } => capsule_hit(o, d, radius, half_length),
        }
    }
}

const T_MIN: f64 = 1e-9;

fn sphere_hit(o: Vec3, d: Vec3, center: Vec3, radius: f64) -> Option<Hit> {
    let oc = o - center;
    let b = oc.dot(d);
    let c = oc.dot(oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = [-b - sq, -b + sq].into_iter().find(|&t| t > T_MIN)?;
    let normal = (o + d * t - center) / radius;
    Some(Hit { t, normal: normal.normalize() })
}

fn box_hit(o: Vec3, d: Vec3, h: [f64; 3]) -> Option<Hit> {
    let (oa, da) = (o.to_array(), d.to_array());
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    let mut sign = 1.0;
    for i in 0..3 {
        if da[i].abs() < 1e-15 {
            if oa[i].abs() > h[i] {
                return None;
            }
            continue;
        }
        let t0 = (-h[i] - oa[i]) / da[i];
        let t1 = (h[i] - oa[i]) / da[i];
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        if lo > t_near {
            t_near = lo;
            axis = i;
            sign = -da[i].signum();
        }
        t_far = t_far.min(hi);
    }
    if t_near > t_far || t_near <= T_MIN {
        return None;
    }
    let mut n = [0.0; 3];
    n[axis] = sign;
    Some(Hit {
        t: t_near,
        normal: Vec3::new(n[0], n[1], n[2]),
    })
}

fn capsule_hit(o: Vec3, d: Vec3, r: f64, h: f64) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |hit: Option<Hit>| {
        if let Some(hit) = hit {
            if best.map_or(true, |b| hit.t < b.t) {
                best = Some(hit);
            }
        }
    };
    // lateral cylinder x^2 + z^2 = r^2, |y| <= h
    let a = d.x * d.x + d.z * d.z;
    if a > 1e-15 {
        let b = o.x * d.x + o.z * d.z;
        let c = o.x * o.x + o.z * o.z - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                let p = o + d * t;
                if t > T_MIN && p.y.abs() <= h {
                    consider(Some(Hit {
                        t,
                        normal: Vec3::new(p.x, 0.0, p.z).normalize(),
                    }));
                    break;
                }
            }
        }
    }
    for cy in [-h, h] {
        let center = Vec3::new(0.0, cy, 0.0);
        if let Some(hit) = sphere_hit(o, d, center, r) {
            let p = o + d * hit.t;
            // only the outward half of each cap belongs to the surface
            if (p.y - cy) * cy >= 0.0 {
                consider(Some(hit));
            }
        }
    }
    best
}

/// One material region: surface points whose direction from the origin is
/// closest to `site` take `material`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub site: [f64; 3],
    pub material: MaterialParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub primitive: Primitive,
    pub texture_seed: u64,
    pub regions: Vec<Region>,
}

impl SceneSpec {
    /// Region index at a canonical surface position.
    pub fn region_at(&self, p: Vec3) -> usize {
        let dir = p.normalize();
        let mut best = (0, f64::NEG_INFINITY);
        for (i, r) in self.regions.iter().enumerate() {
            let s = dir.dot(Vec3::new(r.site[0], r.site[1], r.site[2]));
            if s > best.1 {
                best = (i, s);
            }
        }
        best.0
    }

    pub fn material_at(&self, p: Vec3) -> &MaterialParams {
        &self.regions[self.region_at(p)].material
    }
}

fn quantized(rng: &mut ChaCha8Rng, lo: u8, hi: u8) -> f64 {
    u8_to_unit(rng.gen_range(lo..=hi)) as f64
}

fn luma(a: &[f64; 3]) -> f64 {
    0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2]
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let l = v.length();
        if l > 1e-3 && l <= 1.0 {
            return v / l;
        }
    }
}

fn distinct_enough(a: &MaterialParams, b: &MaterialParams) -> bool {
    (luma(&a.albedo) - luma(&b.albedo)).abs() >= 0.08
        && (a.metallic - b.metallic).abs() + (a.roughness - b.roughness).abs() >= 0.15
}

/// Deterministic procedural scene for `seed`.
///
/// Every scene has 2 to 4 regions, at least one with metallic above 0.5 and one
/// below, and all material values lie on the 8-bit grid so they survive PNG
/// storage unchanged.
pub fn make_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce7_e000_0000);
    let primitive = match rng.gen_range(0..3) {
        0 => Primitive::Sphere {
            radius: rng.gen_range(0.75..0.95),
        },
        1 => Primitive::Box {
            half_extents: [rng.gen_range(0.45..0.7), rng.gen_range(0.45..0.7), rng.gen_range(0.45..0.7)],
        },
        _ => Primitive::Capsule {
            radius: rng.gen_range(0.4..0.55),
            half_length: rng.gen_range(0.2..0.4),
        },
    };
    let texture_seed: u64 = rng.gen();
    let mut tex = ChaCha8Rng::seed_from_u64(texture_seed);
    let n_regions = tex.gen_range(2..=4usize);

    let mut regions: Vec<Region> = Vec::with_capacity(n_regions);
    while regions.len() < n_regions {
        let i = regions.len();
        let metallic = match i {
            0 => quantized(&mut tex, 166, 255),
            1 => quantized(&mut tex, 0, 90),
            _ => quantized(&mut tex, 0, 255),
        };
        let material = MaterialParams::new(
            [quantized(&mut tex, 20, 235), quantized(&mut tex, 20, 235), quantized(&mut tex, 20, 235)],
            metallic,
            quantized(&mut tex, 38, 230),
        );
        if regions.iter().all(|r| distinct_enough(&r.material, &material)) {
            regions.push(Region {
                site: random_unit(&mut tex).to_array(),
                material,
            });
        }
    }
    SceneSpec {
        seed,
        primitive,
        texture_seed,
        regions,
    }
}
