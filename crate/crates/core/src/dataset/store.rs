//! On-disk dataset layout:
//!
//! ```text
//! root/index.json
//! root/<scene_id>/views/e<elev>_a<azim>/{albedo,mr,mask}.png
//! root/<scene_id>/views/e<elev>_a<azim>/{normal,position}.f32
//! root/<scene_id>/views/e<elev>_a<azim>/rgb_<light_tag>.png
//! ```
//!
//! Every file is listed in the index with its SHA-256; reads verify it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use super::grid::{build_candidate_grid, view_key, Candidate, CandidateSet, GridConfig};
use super::sample::{target_azimuth_set, TargetView, ViewSource};
use crate::error::{Error, Result};
use crate::render::raster::{u8_to_unit, unit_to_u8};
use crate::render::{self, CameraPose, GeometryMaps, MaterialMaps, Raster, SceneSpec};

pub const INDEX_FILE: &str = "index.json";
pub const FORMAT_NAME: &str = "matmvp-dataset";
pub const FORMAT_VERSION: u32 = 1;
pub const RAW_MAGIC: &[u8; 4] = b"MMVP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub key: String,
    pub elevation: f64,
    pub azimuth: f64,
    /// Light tags with an `rgb_<tag>.png` in this view.
    pub lightings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub split: Split,
    pub spec: SceneSpec,
    pub candidates: CandidateSet,
    pub views: Vec<ViewEntry>,
    /// Relative path (from the scene directory) to hex SHA-256.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format: String,
    pub version: u32,
    pub grid: GridConfig,
    pub scenes: Vec<SceneEntry>,
}

impl DatasetIndex {
    pub fn candidate_count(&self) -> usize {
        self.scenes.iter().map(|s| s.candidates.len()).sum()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_png_rgb(r: &Raster) -> Result<Vec<u8>> {
    if r.channels != 3 {
        return Err(Error::invalid("rgb png needs 3 channels"));
    }
    let bytes: Vec<u8> = r.data.iter().map(|&v| unit_to_u8(v)).collect();
    let img = image::RgbImage::from_raw(r.width as u32, r.height as u32, bytes)
        .ok_or_else(|| Error::invalid("raster size mismatch"))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

fn encode_png_mask(r: &Raster) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = r.data.iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(r.width as u32, r.height as u32, bytes)
        .ok_or_else(|| Error::invalid("raster size mismatch"))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

pub fn decode_png_rgb(bytes: &[u8]) -> Result<Raster> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::integrity(format!("png decode: {e}")))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(u8_to_unit).collect();
    Raster::from_vec(h as usize, w as usize, 3, data)
}

fn decode_png_mask(bytes: &[u8]) -> Result<Raster> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::integrity(format!("png decode: {e}")))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| if v > 127 { 1.0 } else { 0.0 }).collect();
    Raster::from_vec(h as usize, w as usize, 1, data)
}

/// Raw float32 array: magic `MMVP`, u32 H, u32 W, u32 C, then H*W*C
/// little-endian floats.
pub fn encode_raw_f32(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + r.data.len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    for d in [r.height, r.width, r.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &r.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw_f32(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
        return Err(Error::integrity("raw array header missing or wrong magic"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::integrity("raw array dimensions overflow"))?;
    if bytes.len() != 16 + n * 4 {
        return Err(Error::integrity(format!(
            "raw array payload is {} bytes, header promises {}",
            bytes.len() - 16,
            n * 4
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Raster::from_vec(h, w, c, data)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

fn write_scene(root: &Path, id: &str, split: Split, scene: &SceneSpec, grid: &GridConfig) -> Result<SceneEntry> {
    let candidates = build_candidate_grid(scene, grid)?;
    // view key -> (pose, lightings)
    let mut views: BTreeMap<String, (CameraPose, Vec<Candidate>)> = BTreeMap::new();
    for c in &candidates.entries {
        views.entry(c.view.clone()).or_insert_with(|| (c.pose, Vec::new())).1.push(c.clone());
    }
    for &elev in &grid.fixed_elevations {
        for az in target_azimuth_set(grid) {
            let pose = CameraPose::new(elev, az)?;
            views.entry(view_key(elev, pose.azimuth)).or_insert_with(|| (pose, Vec::new()));
        }
    }

    let scene_dir = root.join(id);
    let mut checksums = BTreeMap::new();
    let mut entries = Vec::with_capacity(views.len());
    for (key, (pose, cands)) in &views {
        let (maps, geometry) = render::render_maps_and_geometry(scene, pose, grid.resolution)?;
        let mut files: Vec<(String, Vec<u8>)> = vec![
            ("albedo.png".into(), encode_png_rgb(&maps.albedo)?),
            ("mr.png".into(), encode_png_rgb(&maps.mr)?),
            ("normal.f32".into(), encode_raw_f32(&geometry.normal)),
            ("position.f32".into(), encode_raw_f32(&geometry.position)),
            ("mask.png".into(), encode_png_mask(&geometry.mask)?),
        ];
        let mut lightings = Vec::new();
        for c in cands {
            let rgb = render::relight(&maps, &geometry, &c.lighting, pose)?;
            files.push((c.image_file(), encode_png_rgb(&rgb)?));
            lightings.push(c.lighting.tag());
        }
        for (name, bytes) in files {
            let rel = format!("views/{key}/{name}");
            write_file(&scene_dir.join(&rel), &bytes)?;
            checksums.insert(rel, sha256_hex(&bytes));
        }
        entries.push(ViewEntry {
            key: key.clone(),
            elevation: pose.elevation,
            azimuth: pose.azimuth,
            lightings,
        });
    }
    Ok(SceneEntry {
        id: id.to_string(),
        split,
        spec: scene.clone(),
        candidates,
        views: entries,
        checksums,
    })
}

/// Renders and writes every scene, then the index. `heldout` scenes are
/// taken from the end of the list. `workers` bounds the rayon pool.
pub fn write_dataset(
    root: &Path,
    scenes: &[SceneSpec],
    grid: &GridConfig,
    heldout: usize,
    workers: usize,
) -> Result<DatasetIndex> {
    grid.validate()?;
    if heldout > scenes.len() {
        return Err(Error::invalid("more held-out scenes than scenes"));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let n_train = scenes.len() - heldout;
    let entries = pool.install(|| {
        scenes
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let split = if i < n_train { Split::Train } else { Split::Heldout };
                write_scene(root, &scene_id(i), split, s, grid)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let index = DatasetIndex {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        grid: grid.clone(),
        scenes: entries,
    };
    let json = serde_json::to_vec_pretty(&index).map_err(|e| Error::invalid(format!("index encode: {e}")))?;
    write_file(&root.join(INDEX_FILE), &json)?;
    Ok(index)
}

/// Read handle over a dataset directory. Files are loaded lazily and checked
/// against their recorded digest on every read.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub index: DatasetIndex,
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let path = root.join(INDEX_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let index: DatasetIndex =
        serde_json::from_slice(&bytes).map_err(|e| Error::integrity(format!("malformed index: {e}")))?;
    if index.format != FORMAT_NAME || index.version != FORMAT_VERSION {
        return Err(Error::integrity(format!(
            "unsupported dataset format {} v{}",
            index.format, index.version
        )));
    }
    for s in &index.scenes {
        if s.candidates.len() != index.grid.expected_count() {
            return Err(Error::integrity(format!(
                "{} lists {} candidates, grid enumerates {}",
                s.id,
                s.candidates.len(),
                index.grid.expected_count()
            )));
        }
        for c in &s.candidates.entries {
            if !s.checksums.contains_key(&format!("views/{}/{}", c.view, c.image_file())) {
                return Err(Error::integrity(format!("{}: candidate {} has no image", s.id, c.view)));
            }
        }
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        index,
    })
}

impl Dataset {
    pub fn scene_entry(&self, scene: usize) -> Result<&SceneEntry> {
        self.index
            .scenes
            .get(scene)
            .ok_or_else(|| Error::integrity(format!("no scene {scene} in dataset")))
    }

    pub fn scene_index(&self, id: &str) -> Option<usize> {
        self.index.scenes.iter().position(|s| s.id == id)
    }

    pub fn split(&self, split: Split) -> Vec<usize> {
        (0..self.index.scenes.len())
            .filter(|&i| self.index.scenes[i].split == split)
            .collect()
    }

    /// Reads one file of a scene, verifying its digest.
    pub fn read_file(&self, scene: usize, rel: &str) -> Result<Vec<u8>> {
        let entry = self.scene_entry(scene)?;
        let expect = entry
            .checksums
            .get(rel)
            .ok_or_else(|| Error::integrity(format!("{}/{rel} is not in the index", entry.id)))?;
        let path = self.root.join(&entry.id).join(rel);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::integrity(format!("missing file {}", path.display())),
            _ => Error::io(&path, e),
        })?;
        if &sha256_hex(&bytes) != expect {
            return Err(Error::integrity(format!("checksum mismatch for {}", path.display())));
        }
        Ok(bytes)
    }

    pub fn view_entry(&self, scene: usize, key: &str) -> Result<&ViewEntry> {
        let entry = self.scene_entry(scene)?;
        entry
            .views
            .iter()
            .find(|v| v.key == key)
            .ok_or_else(|| Error::integrity(format!("{} has no view {key}", entry.id)))
    }

    pub fn load_maps(&self, scene: usize, key: &str) -> Result<MaterialMaps> {
        Ok(MaterialMaps {
            albedo: decode_png_rgb(&self.read_file(scene, &format!("views/{key}/albedo.png"))?)?,
            mr: decode_png_rgb(&self.read_file(scene, &format!("views/{key}/mr.png"))?)?,
        })
    }

    pub fn load_geometry(&self, scene: usize, key: &str) -> Result<GeometryMaps> {
        Ok(GeometryMaps {
            normal: decode_raw_f32(&self.read_file(scene, &format!("views/{key}/normal.f32"))?)?,
            position: decode_raw_f32(&self.read_file(scene, &format!("views/{key}/position.f32"))?)?,
            mask: decode_png_mask(&self.read_file(scene, &format!("views/{key}/mask.png"))?)?,
        })
    }

    /// Image at a view path such as `e0_a90/rgb_env1.png`.
    pub fn load_image_path(&self, scene: usize, rel: &str) -> Result<Raster> {
        decode_png_rgb(&self.read_file(scene, &format!("views/{rel}"))?)
    }

    pub fn candidate_by_path(&self, scene: usize, rel: &str) -> Result<&Candidate> {
        let entry = self.scene_entry(scene)?;
        entry
            .candidates
            .entries
            .iter()
            .find(|c| format!("{}/{}", c.view, c.image_file()) == rel)
            .ok_or_else(|| Error::invalid(format!("{} has no reference image {rel}", entry.id)))
    }
}

impl ViewSource for Dataset {
    fn grid(&self) -> &GridConfig {
        &self.index.grid
    }

    fn scene_count(&self) -> usize {
        self.index.scenes.len()
    }

    fn candidates(&self, scene: usize) -> Result<&CandidateSet> {
        Ok(&self.scene_entry(scene)?.candidates)
    }

    fn target(&self, scene: usize, elevation: f64, azimuth: f64) -> Result<TargetView> {
        let pose = CameraPose::new(elevation, azimuth)?;
        let key = view_key(elevation, pose.azimuth);
        let view = self.view_entry(scene, &key)?;
        let pose = CameraPose::new(view.elevation, view.azimuth)?;
        Ok(TargetView {
            pose,
            maps: self.load_maps(scene, &key)?,
            geometry: self.load_geometry(scene, &key)?,
        })
    }

    fn image(&self, scene: usize, cand: &Candidate) -> Result<Raster> {
        self.load_image_path(scene, &format!("{}/{}", cand.view, cand.image_file()))
    }

    fn spec(&self, scene: usize) -> Result<&SceneSpec> {
        Ok(&self.scene_entry(scene)?.spec)
    }
}
