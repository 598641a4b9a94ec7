//! Metallic-roughness microfacet BRDF: Lambert diffuse plus a Cook-Torrance
//! specular lobe (GGX distribution, height-correlated Smith visibility,
//! Schlick Fresnel).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::math::Vec3;
use crate::error::{Error, Result};

/// Roughness floor applied before shading; keeps GGX away from its delta limit.
pub const MIN_ROUGHNESS: f64 = 0.04;
/// Reflectance at normal incidence for dielectrics.
pub const DIELECTRIC_F0: f64 = 0.04;
const UNIT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub albedo: [f64; 3],
    pub metallic: f64,
    pub roughness: f64,
}

impl MaterialParams {
    /// Builds a material with every component clamped to `[0, 1]`.
    pub fn new(albedo: [f64; 3], metallic: f64, roughness: f64) -> Self {
        let c = |v: f64| v.clamp(0.0, 1.0);
        MaterialParams {
            albedo: [c(albedo[0]), c(albedo[1]), c(albedo[2])],
            metallic: c(metallic),
            roughness: c(roughness),
        }
    }

    pub fn albedo_vec(&self) -> Vec3 {
        Vec3::new(self.albedo[0], self.albedo[1], self.albedo[2])
    }

    /// Specular reflectance at normal incidence, `mix(0.04, albedo, metallic)`.
    pub fn f0(&self) -> Vec3 {
        Vec3::lerp(Vec3::splat(DIELECTRIC_F0), self.albedo_vec(), self.metallic)
    }

    pub fn shading_roughness(&self) -> f64 {
        self.roughness.max(MIN_ROUGHNESS)
    }
}

/// GGX / Trowbridge-Reitz normal distribution, `alpha = roughness^2`.
pub fn ggx_distribution(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

/// Height-correlated Smith visibility term `G / (4 NoL NoV)`.
pub fn smith_visibility(n_dot_l: f64, n_dot_v: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let gv = n_dot_l * (n_dot_v * n_dot_v * (1.0 - a2) + a2).sqrt();
    let gl = n_dot_v * (n_dot_l * n_dot_l * (1.0 - a2) + a2).sqrt();
    0.5 / (gv + gl)
}

/// Schlick Fresnel with the grazing reflectance limited by the amount of
/// reflectance at normal incidence, `f90 = saturate(50 * 0.33 * sum(f0))`.
/// For every physical dielectric or metal f90 saturates to 1 (plain Schlick);
/// an `f0` of zero (black metal) reflects nothing at any angle.
pub fn schlick_fresnel(f0: Vec3, cos_theta: f64) -> Vec3 {
    let k = (1.0 - cos_theta).clamp(0.0, 1.0).powi(5);
    let f90 = (f0.dot(Vec3::splat(50.0 * 0.33))).clamp(0.0, 1.0);
    f0 + (Vec3::splat(f90) - f0) * k
}

/// Diffuse lobe `(1 - metallic) * albedo / pi`.
pub fn diffuse_term(mat: &MaterialParams) -> Vec3 {
    mat.albedo_vec() * ((1.0 - mat.metallic) / PI)
}

/// Specular lobe value. Symmetric in `l` and `v` bit for bit: every
/// expression is built from commutative combinations of the two directions.
pub fn specular_term(mat: &MaterialParams, n: Vec3, v: Vec3, l: Vec3) -> Vec3 {
    let n_dot_l = n.dot(l);
    let n_dot_v = n.dot(v);
    if n_dot_l <= 0.0 || n_dot_v <= 0.0 {
        return Vec3::ZERO;
    }
    let h = (l + v).normalize();
    let n_dot_h = n.dot(h).max(0.0);
    // v.h == l.h analytically; averaging keeps the swap exact in floating point.
    let v_dot_h = 0.5 * (v.dot(h) + l.dot(h));
    let r = mat.shading_roughness();
    let alpha = r * r;
    let d = ggx_distribution(n_dot_h, alpha);
    let vis = smith_visibility(n_dot_l, n_dot_v, alpha);
    schlick_fresnel(mat.f0(), v_dot_h) * (d * vis)
}

/// Full BRDF value `f(l, v)` without the cosine factor.
pub fn brdf_eval(mat: &MaterialParams, n: Vec3, v: Vec3, l: Vec3) -> Vec3 {
    if n.dot(l) <= 0.0 || n.dot(v) <= 0.0 {
        return Vec3::ZERO;
    }
    diffuse_term(mat) + specular_term(mat, n, v, l)
}

fn check_unit(name: &str, d: Vec3) -> Result<()> {
    let len = d.length();
    if (len - 1.0).abs() > UNIT_TOLERANCE || !len.is_finite() {
        return Err(Error::invalid(format!(
            "{name} must be unit length, got |{name}| = {len}"
        )));
    }
    Ok(())
}

/// Reflected radiance `f(l, v) * max(n.l, 0) * radiance_in`.
pub fn shade_brdf(mat: &MaterialParams, n: Vec3, v: Vec3, l: Vec3, radiance_in: Vec3) -> Result<Vec3> {
    check_unit("n", n)?;
    check_unit("v", v)?;
    check_unit("l", l)?;
    if radiance_in.min_elem() < 0.0 {
        return Err(Error::invalid("incoming radiance must be non-negative"));
    }
    let n_dot_l = n.dot(l);
    if n_dot_l <= 0.0 {
        return Ok(Vec3::ZERO);
    }
    Ok(brdf_eval(mat, n, v, l).mul_elem(radiance_in) * n_dot_l)
}

#[cfg(test)]
mod tests {
    use super::*;

    const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    /// Independent scalar transcription of the shading model, one channel.
    fn oracle_channel(albedo: f64, f90: f64, metallic: f64, roughness: f64, nl: f64, nv: f64, nh: f64, vh: f64) -> f64 {
        let r = if roughness < 0.04 { 0.04 } else { roughness };
        let a = r * r;
        let a2 = a * a;
        let denom = nh * nh * (a2 - 1.0) + 1.0;
        let d = a2 / (std::f64::consts::PI * denom * denom);
        let lam_v = nl * (nv * nv * (1.0 - a2) + a2).sqrt();
        let lam_l = nv * (nl * nl * (1.0 - a2) + a2).sqrt();
        let vis = 0.5 / (lam_v + lam_l);
        let f0 = 0.04 * (1.0 - metallic) + albedo * metallic;
        let f = f0 + (f90 - f0) * (1.0 - vh).powi(5);
        let diffuse = (1.0 - metallic) * albedo / std::f64::consts::PI;
        (diffuse + d * vis * f) * nl
    }

    #[test]
    fn black_metal_reflects_nothing() {
        let mat = MaterialParams::new([0.0; 3], 1.0, 0.3);
        let l = Vec3::new(0.3, 0.2, 1.0).normalize();
        let v = Vec3::new(-0.4, 0.1, 1.0).normalize();
        let out = shade_brdf(&mat, Z, v, l, Vec3::ONE).unwrap();
        assert_eq!(out, Vec3::ZERO);
        let grazing = Vec3::new(0.99, 0.0, 0.141).normalize();
        assert_eq!(shade_brdf(&mat, Z, grazing, l, Vec3::ONE).unwrap(), Vec3::ZERO);
    }

    #[test]
    fn backfacing_light_is_black() {
        let mat = MaterialParams::new([0.7, 0.5, 0.2], 0.2, 0.5);
        // n.l = -0.5
        let l = Vec3::new((0.75f64).sqrt(), 0.0, -0.5);
        let out = shade_brdf(&mat, Z, Z, l, Vec3::ONE).unwrap();
        assert_eq!(out, Vec3::ZERO);
    }

    #[test]
    fn head_on_grey_dielectric_matches_scalar_oracle() {
        let mat = MaterialParams::new([0.8; 3], 0.0, 0.5);
        let out = shade_brdf(&mat, Z, Z, Z, Vec3::ONE).unwrap();
        let expect = oracle_channel(0.8, 1.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0);
        for c in out.to_array() {
            assert!((c - expect).abs() <= 1e-9, "{c} vs {expect}");
        }
        // frozen value of the oracle for this configuration
        assert!((expect - 0.305_577_490_736_439_03).abs() < 1e-12, "{expect}");
    }

    #[test]
    fn oblique_configuration_matches_scalar_oracle() {
        let mat = MaterialParams::new([0.9, 0.4, 0.1], 0.35, 0.22);
        let l = Vec3::new(0.5, 0.1, 0.8).normalize();
        let v = Vec3::new(-0.3, 0.4, 0.9).normalize();
        let h = (l + v).normalize();
        let out = shade_brdf(&mat, Z, v, l, Vec3::new(1.0, 2.0, 0.5)).unwrap();
        let radiance = [1.0, 2.0, 0.5];
        let f0: Vec<f64> = mat.albedo.iter().map(|a| 0.04 * 0.65 + a * 0.35).collect();
        let f90 = (16.5 * (f0[0] + f0[1] + f0[2])).min(1.0);
        for (i, c) in out.to_array().into_iter().enumerate() {
            let e = oracle_channel(mat.albedo[i], f90, 0.35, 0.22, Z.dot(l), Z.dot(v), Z.dot(h), v.dot(h)) * radiance[i];
            assert!((c - e).abs() <= 1e-9 * e.max(1.0), "{c} vs {e}");
        }
    }

    #[test]
    fn rejects_non_unit_directions() {
        let mat = MaterialParams::new([0.5; 3], 0.0, 0.5);
        let err = shade_brdf(&mat, Z * 1.01, Z, Z, Vec3::ONE).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn lambertian_limit_is_roughness_independent() {
        for r in [0.04, 0.3, 0.9] {
            let mat = MaterialParams::new([0.6, 0.3, 0.9], 0.0, r);
            let d = diffuse_term(&mat);
            let e = Vec3::new(0.6, 0.3, 0.9) / PI;
            assert!((d - e).length() < 1e-15);
        }
    }

    #[test]
    fn material_components_are_clamped() {
        let m = MaterialParams::new([1.5, -0.2, 0.5], 2.0, -1.0);
        assert_eq!(m.albedo, [1.0, 0.0, 0.5]);
        assert_eq!(m.metallic, 1.0);
        assert_eq!(m.roughness, 0.0);
        assert_eq!(m.shading_roughness(), MIN_ROUGHNESS);
    }
}
