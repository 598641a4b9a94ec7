//! Analytic rendering of procedural scenes: ground-truth material and
//! geometry maps plus lit reference images.

pub mod brdf;
pub mod camera;
pub mod light;
pub mod math;
pub mod raster;
pub mod scene;

pub use brdf::{brdf_eval, shade_brdf, MaterialParams};
pub use camera::CameraPose;
pub use light::LightingCondition;
pub use math::Vec3;
pub use raster::{GeometryMaps, MaterialMaps, Raster, RenderedView};
pub use scene::{make_scene, Primitive, SceneSpec};

use crate::error::{Error, Result};

pub const SUPPORTED_RESOLUTIONS: [usize; 3] = [32, 64, 128];

fn check_resolution(resolution: usize) -> Result<()> {
    if SUPPORTED_RESOLUTIONS.contains(&resolution) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "resolution {resolution} not in {SUPPORTED_RESOLUTIONS:?}"
        )))
    }
}

/// Decodes a `[0, 1]`-remapped normal back to a unit vector.
pub fn decode_normal(px: &[f32]) -> Vec3 {
    Vec3::new(
        2.0 * px[0] as f64 - 1.0,
        2.0 * px[1] as f64 - 1.0,
        2.0 * px[2] as f64 - 1.0,
    )
    .normalize()
}

/// Ray-casts the scene once, returning the geometry maps and, per covered
/// pixel, the material region index.
fn trace(scene: &SceneSpec, pose: &CameraPose, resolution: usize) -> (GeometryMaps, Vec<Option<usize>>) {
    let (h, w) = (resolution, resolution);
    let mut geo = GeometryMaps::zeros(h, w);
    let mut regions = vec![None; h * w];
    let eye = pose.eye();
    for row in 0..h {
        for col in 0..w {
            let dir = pose.ray_dir(row, col, h, w);
            if let Some(hit) = scene.primitive.intersect(eye, dir) {
                let p = eye + dir * hit.t;
                let n = hit.normal;
                let np = geo.normal.pixel_mut(row, col);
                for (dst, v) in np.iter_mut().zip(n.to_array()) {
                    *dst = (v * 0.5 + 0.5) as f32;
                }
                let pp = geo.position.pixel_mut(row, col);
                for (dst, v) in pp.iter_mut().zip(p.to_array()) {
                    *dst = v as f32;
                }
                geo.mask.pixel_mut(row, col)[0] = 1.0;
                regions[row * w + col] = Some(scene.region_at(Vec3::from_slice(geo.position.pixel(row, col))));
            }
        }
    }
    (geo, regions)
}

/// Geometry maps (normal, canonical position, mask) of `scene` seen from `pose`.
pub fn render_geometry(scene: &SceneSpec, pose: &CameraPose, resolution: usize) -> Result<GeometryMaps> {
    check_resolution(resolution)?;
    Ok(trace(scene, pose, resolution).0)
}

fn paint_maps(scene: &SceneSpec, regions: &[Option<usize>], resolution: usize) -> MaterialMaps {
    let mut maps = MaterialMaps::zeros(resolution, resolution);
    for (i, region) in regions.iter().enumerate() {
        if let Some(r) = region {
            let m = &scene.regions[*r].material;
            let a = &mut maps.albedo.data[i * 3..i * 3 + 3];
            for c in 0..3 {
                a[c] = m.albedo[c] as f32;
            }
            let mr = &mut maps.mr.data[i * 3..i * 3 + 3];
            mr[0] = 0.0;
            mr[1] = m.roughness as f32;
            mr[2] = m.metallic as f32;
        }
    }
    maps
}

/// Ground-truth albedo and packed MR maps for one view.
pub fn render_gt_maps(scene: &SceneSpec, pose: &CameraPose, resolution: usize) -> Result<MaterialMaps> {
    check_resolution(resolution)?;
    let (_, regions) = trace(scene, pose, resolution);
    Ok(paint_maps(scene, &regions, resolution))
}

/// Material maps and geometry from a single ray cast.
pub fn render_maps_and_geometry(
    scene: &SceneSpec,
    pose: &CameraPose,
    resolution: usize,
) -> Result<(MaterialMaps, GeometryMaps)> {
    check_resolution(resolution)?;
    let (geo, regions) = trace(scene, pose, resolution);
    Ok((paint_maps(scene, &regions, resolution), geo))
}

/// Lit image of `scene`. Shading goes through [`relight`] on the scene's own
/// ground-truth maps, so relighting GT maps reproduces this image exactly.
pub fn render_view(
    scene: &SceneSpec,
    pose: &CameraPose,
    lighting: &LightingCondition,
    resolution: usize,
) -> Result<RenderedView> {
    let (maps, geometry) = render_maps_and_geometry(scene, pose, resolution)?;
    let rgb = relight(&maps, &geometry, lighting, pose)?;
    Ok(RenderedView {
        rgb,
        geometry,
        pose: *pose,
        lighting: *lighting,
    })
}

/// Shades material maps under `lighting`. Ambient light contributes
/// `ambient * ((1 - metallic) * albedo + F0)`; point lights carry no ambient.
/// Output is tonemapped by clamping to `[0, 1]` (exposure 1) and snapped to
/// the 8-bit grid.
pub fn relight(
    maps: &MaterialMaps,
    geometry: &GeometryMaps,
    lighting: &LightingCondition,
    pose: &CameraPose,
) -> Result<Raster> {
    lighting.validate()?;
    let (h, w) = geometry.resolution();
    if maps.albedo.height != h
        || maps.albedo.width != w
        || !maps.albedo.same_shape(&maps.mr)
        || !geometry.normal.same_resolution(&geometry.mask)
        || !geometry.position.same_resolution(&geometry.mask)
    {
        return Err(Error::invalid("material maps and geometry differ in resolution"));
    }
    let eye = pose.eye();
    let mut out = Raster::zeros(h, w, 3);
    for row in 0..h {
        for col in 0..w {
            if !geometry.covered(row, col) {
                continue;
            }
            let a = maps.albedo.pixel(row, col);
            let mr = maps.mr.pixel(row, col);
            let mat = MaterialParams::new([a[0] as f64, a[1] as f64, a[2] as f64], mr[2] as f64, mr[1] as f64);
            let n = decode_normal(geometry.normal.pixel(row, col));
            let p = Vec3::from_slice(geometry.position.pixel(row, col));
            let v = (eye - p).normalize();
            let (light, ambient) = lighting.incident(pose, p);
            let direct = shade_brdf(&mat, n, v, light.direction, light.radiance)?;
            let amb = ambient.mul_elem(mat.albedo_vec() * (1.0 - mat.metallic) + mat.f0());
            let radiance = direct + amb;
            let px = out.pixel_mut(row, col);
            for (dst, v) in px.iter_mut().zip(radiance.to_array()) {
                *dst = raster::u8_to_unit(raster::unit_to_u8(v as f32));
            }
        }
    }
    Ok(out)
}
