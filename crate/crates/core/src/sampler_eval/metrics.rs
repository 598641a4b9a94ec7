//! Pixel-space error and structural scores over predicted material maps.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::render::{GeometryMaps, MaterialMaps, Raster};

const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

fn check_same(a: &Raster, b: &Raster) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::invalid(format!(
            "rasters differ in resolution: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Mean absolute difference over covered pixels and the listed channels.
pub fn masked_mae(pred: &Raster, gt: &Raster, mask: &Raster, channels: &[usize]) -> Result<f64> {
    check_same(pred, gt)?;
    check_same(pred, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for row in 0..pred.height {
        for col in 0..pred.width {
            if mask.get(row, col, 0) <= 0.5 {
                continue;
            }
            for &c in channels {
                sum += (pred.get(row, col, c) as f64 - gt.get(row, col, c) as f64).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedScore("mask covers no pixels".into()));
    }
    Ok(sum / n as f64)
}

/// Mean per-pixel standard deviation of predicted albedo across predictions
/// that share pose and differ only in reference lighting. `preds[l][v]` is
/// view `v` predicted from lighting `l`.
pub fn illumination_invariance_score(preds: &[Vec<MaterialMaps>], geometry: &[GeometryMaps]) -> Result<f64> {
    if preds.len() < 2 {
        return Err(Error::invalid("illumination invariance needs at least two lightings"));
    }
    if preds.iter().any(|p| p.len() != geometry.len()) {
        return Err(Error::invalid("every lighting needs one prediction per view"));
    }
    let l = preds.len() as f64;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (v, geo) in geometry.iter().enumerate() {
        for p in preds {
            check_same(&p[v].albedo, &geo.mask)?;
        }
        for row in 0..geo.mask.height {
            for col in 0..geo.mask.width {
                if !geo.covered(row, col) {
                    continue;
                }
                for c in 0..3 {
                    let vals: Vec<f64> = preds.iter().map(|p| p[v].albedo.get(row, col, c) as f64).collect();
                    let mean = vals.iter().sum::<f64>() / l;
                    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / l;
                    sum += var.sqrt();
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedScore("no covered pixels".into()));
    }
    Ok(sum / n as f64)
}

type Cell = (i64, i64, i64);

fn cell_of(p: &[f32], size: f64) -> Cell {
    (
        (p[0] as f64 / size).floor() as i64,
        (p[1] as f64 / size).floor() as i64,
        (p[2] as f64 / size).floor() as i64,
    )
}

/// Mean absolute albedo disagreement between views at surface points seen in
/// both. A pixel of view `i` is matched to the pixel of view `j > i` whose
/// canonical position is nearest, if that distance is within `threshold`.
pub fn cross_view_consistency_score(preds: &[MaterialMaps], geometry: &[GeometryMaps], threshold: f64) -> Result<f64> {
    if preds.len() != geometry.len() {
        return Err(Error::invalid("one prediction per view is required"));
    }
    if !(threshold > 0.0) {
        return Err(Error::invalid("match threshold must be positive"));
    }
    let mut grids: Vec<HashMap<Cell, Vec<(usize, usize)>>> = Vec::with_capacity(geometry.len());
    for (p, g) in preds.iter().zip(geometry) {
        check_same(&p.albedo, &g.mask)?;
        let mut grid: HashMap<Cell, Vec<(usize, usize)>> = HashMap::new();
        for row in 0..g.mask.height {
            for col in 0..g.mask.width {
                if g.covered(row, col) {
                    grid.entry(cell_of(g.position.pixel(row, col), threshold)).or_default().push((row, col));
                }
            }
        }
        grids.push(grid);
    }
    let t2 = threshold * threshold;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..geometry.len() {
        let gi = &geometry[i];
        for j in i + 1..geometry.len() {
            let gj = &geometry[j];
            for row in 0..gi.mask.height {
                for col in 0..gi.mask.width {
                    if !gi.covered(row, col) {
                        continue;
                    }
                    let p = gi.position.pixel(row, col);
                    let (cx, cy, cz) = cell_of(p, threshold);
                    let mut best: Option<(f64, (usize, usize))> = None;
                    for dx in -1..=1 {
                        for dy in -1..=1 {
                            for dz in -1..=1 {
                                let Some(list) = grids[j].get(&(cx + dx, cy + dy, cz + dz)) else { continue };
                                for &(r2, c2) in list {
                                    let q = gj.position.pixel(r2, c2);
                                    let d2: f64 = (0..3).map(|k| (p[k] as f64 - q[k] as f64).powi(2)).sum();
                                    if d2 <= t2 && best.map_or(true, |(b, _)| d2 < b) {
                                        best = Some((d2, (r2, c2)));
                                    }
                                }
                            }
                        }
                    }
                    if let Some((_, (r2, c2))) = best {
                        let a = preds[i].albedo.pixel(row, col);
                        let b = preds[j].albedo.pixel(r2, c2);
                        sum += (0..3).map(|k| (a[k] as f64 - b[k] as f64).abs()).sum::<f64>() / 3.0;
                        n += 1;
                    }
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedScore(format!("no surface points matched across views within {threshold}")));
    }
    Ok(sum / n as f64)
}

/// Sobel gradient magnitude of a scalar image; borders use clamped indices.
pub fn sobel_magnitude(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        values[r * w + c]
    };
    let mut out = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1) - at(r - 1, c - 1) - 2.0 * at(r, c - 1) - at(r + 1, c - 1);
            let gy = at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1) - at(r - 1, c - 1) - 2.0 * at(r - 1, c) - at(r - 1, c + 1);
            out[r as usize * w + c as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

fn channel_mix(r: &Raster, weights: &[(usize, f64)]) -> Vec<f64> {
    r.pixels().map(|px| weights.iter().map(|&(c, w)| w * px[c] as f64).sum()).collect()
}

/// Edge map of albedo luma.
pub fn albedo_edges(albedo: &Raster) -> Vec<f64> {
    let luma = channel_mix(albedo, &[(0, LUMA[0]), (1, LUMA[1]), (2, LUMA[2])]);
    sobel_magnitude(&luma, albedo.height, albedo.width)
}

/// Edge map of the MR map: combined gradient magnitude of roughness (G) and
/// metallic (B).
pub fn mr_edges(mr: &Raster) -> Vec<f64> {
    let g = sobel_magnitude(&channel_mix(mr, &[(1, 1.0)]), mr.height, mr.width);
    let b = sobel_magnitude(&channel_mix(mr, &[(2, 1.0)]), mr.height, mr.width);
    g.iter().zip(&b).map(|(x, y)| (x * x + y * y).sqrt()).collect()
}

/// Pearson correlation of two equally sized sequences, restricted to `keep`.
pub fn correlation(a: &[f64], b: &[f64], keep: &[bool]) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = a.iter().zip(b).zip(keep).filter(|(_, &k)| k).map(|((&x, &y), _)| (x, y)).collect();
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return Err(Error::UndefinedScore("fewer than two pixels to correlate".into()));
    }
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 1e-24 || sbb <= 1e-24 {
        return Err(Error::UndefinedScore("edge map has zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pixels whose whole 3x3 neighbourhood is covered, so silhouette edges do
/// not enter the score.
pub fn interior_mask(mask: &Raster) -> Vec<bool> {
    let (h, w) = (mask.height, mask.width);
    let mut out = vec![false; h * w];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            out[r * w + c] = (0..3).all(|dr| (0..3).all(|dc| mask.get(r + dr - 1, c + dc - 1, 0) > 0.5));
        }
    }
    out
}

/// Correlation between the albedo and MR edge maps inside `mask` (the whole
/// image when `None`).
pub fn alignment_score(albedo: &Raster, mr: &Raster, mask: Option<&Raster>) -> Result<f64> {
    check_same(albedo, mr)?;
    let keep = match mask {
        Some(m) => {
            check_same(albedo, m)?;
            interior_mask(m)
        }
        None => vec![true; albedo.height * albedo.width],
    };
    correlation(&albedo_edges(albedo), &mr_edges(mr), &keep)
}
