use std::fmt::Write as _;
use std::path::Path;

use super::evaluate::{EvalReport, ScenePrediction};
use crate::dataset::store::encode_png_rgb;
use crate::error::{Error, Result};
use crate::render::{relight, Raster};

pub const METRIC_NOTE: &str =
    "pixel-space MAE and structural scores (illumination invariance, cross-view consistency, albedo/MR edge alignment); no perceptual-model metrics";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x}"))
}

/// Key/value text: one `key=value` per line, `#` comments, totals first,
/// then `scene.<id>.<metric>` entries. `context` pairs (seed, config path,
/// checkpoint...) are written before the totals.
pub fn format_report(report: &EvalReport, context: &[(&str, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# metrics: {METRIC_NOTE}");
    for (k, v) in context {
        let _ = writeln!(s, "{k}={v}");
    }
    let _ = writeln!(s, "scenes={}", report.per_scene.len());
    let _ = writeln!(s, "albedo_mae={}", report.albedo_mae);
    let _ = writeln!(s, "mr_mae={}", report.mr_mae);
    let _ = writeln!(s, "baseline_albedo_mae={}", report.baseline_albedo_mae);
    let _ = writeln!(s, "illumination_invariance_score={}", report.illumination_invariance_score);
    let _ = writeln!(s, "cross_view_consistency_score={}", report.cross_view_consistency_score);
    let _ = writeln!(s, "alignment_score={}", report.alignment_score);
    for e in &report.per_scene {
        let p = format!("scene.{}", e.scene);
        let _ = writeln!(s, "{p}.albedo_mae={}", e.albedo_mae);
        let _ = writeln!(s, "{p}.mr_mae={}", e.mr_mae);
        let _ = writeln!(s, "{p}.baseline_albedo_mae={}", e.baseline_albedo_mae);
        let _ = writeln!(s, "{p}.illumination_invariance={}", e.illumination_invariance);
        let _ = writeln!(s, "{p}.cross_view_consistency={}", fmt_opt(e.cross_view_consistency));
        let _ = writeln!(s, "{p}.alignment={}", fmt_opt(e.alignment));
    }
    s
}

pub fn write_report(path: &Path, report: &EvalReport, context: &[(&str, String)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, format_report(report, context)).map_err(|e| Error::io(path, e))
}

/// Parses `key=value` lines back into pairs, skipping comments.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

const GAP: usize = 2;

fn blit(dst: &mut Raster, src: &Raster, top: usize, left: usize) {
    for r in 0..src.height {
        for c in 0..src.width {
            dst.pixel_mut(top + r, left + c).copy_from_slice(&src.pixel(r, c)[..3]);
        }
    }
}

/// Contact sheet rows per scene: reference, predicted albedo, predicted MR,
/// GT albedo, GT MR, then the prediction relit under up to three of the
/// scene's lightings. Predictions are those from the first reference.
pub fn contact_sheet(scenes: &[ScenePrediction]) -> Result<Raster> {
    let first = scenes.first().ok_or_else(|| Error::invalid("contact sheet needs at least one scene"))?;
    let views = first.targets.len();
    let (h, w) = first.targets[0].geometry.resolution();
    let rows_per_scene = 5 + first.lightings.len().min(3);
    let width = views * (w + GAP) + GAP;
    let height = scenes.len() * (rows_per_scene * (h + GAP) + GAP) + GAP;
    let mut sheet = Raster::zeros(height, width, 3);
    sheet.data.iter_mut().for_each(|v| *v = 1.0);
    for (si, sp) in scenes.iter().enumerate() {
        let top0 = GAP + si * (rows_per_scene * (h + GAP) + GAP);
        let cell = |row: usize, col: usize| (top0 + row * (h + GAP), GAP + col * (w + GAP));
        let (t, l) = cell(0, 0);
        blit(&mut sheet, &sp.references[0], t, l);
        let pred = &sp.preds[0];
        for (v, target) in sp.targets.iter().enumerate().take(views) {
            let rows = [&pred[v].albedo, &pred[v].mr, &target.maps.albedo, &target.maps.mr];
            for (r, img) in rows.iter().enumerate() {
                let (t, l) = cell(r + 1, v);
                blit(&mut sheet, img, t, l);
            }
            for (k, light) in sp.lightings.iter().take(3).enumerate() {
                let lit = relight(&pred[v], &target.geometry, light, &target.pose)?;
                let (t, l) = cell(5 + k, v);
                blit(&mut sheet, &lit, t, l);
            }
        }
    }
    Ok(sheet)
}

pub fn write_contact_sheet(path: &Path, scenes: &[ScenePrediction]) -> Result<()> {
    let sheet = contact_sheet(scenes)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_png_rgb(&sheet)?).map_err(|e| Error::io(path, e))
}
