//! On-disk patch bundles.
//!
//! A bundle is one directory per sample:
//!
//! ```text
//! <dir>/meta.json    {"id", "alpha", "H", "W", "guide_channels",
//!                     "dtype": "f32", "byte_order": "little", "layout": "CHW planar"}
//! <dir>/guide.bin    guide_channels × H × W
//! <dir>/target.bin   1 × H × W
//! <dir>/source.bin   1 × H/alpha × W/alpha
//! ```
//!
//! Payloads are raw little-endian IEEE-754 binary32, channel-major then
//! row-major, with no header. External prediction bundles use the same
//! conventions with a single `prediction.bin` payload of `H × W` values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_divisible, PatchRecord, Raster, UNITLESS};

pub const META_FILE: &str = "meta.json";
pub const GUIDE_FILE: &str = "guide.bin";
pub const TARGET_FILE: &str = "target.bin";
pub const SOURCE_FILE: &str = "source.bin";
pub const PREDICTION_FILE: &str = "prediction.bin";

const DTYPE: &str = "f32";
const BYTE_ORDER: &str = "little";
const LAYOUT: &str = "CHW planar";

fn default_target_units() -> String {
    "t/px".to_string()
}

fn default_guide_units() -> String {
    UNITLESS.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub id: String,
    pub alpha: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub guide_channels: usize,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    #[serde(default = "default_target_units")]
    pub target_units: String,
    #[serde(default = "default_guide_units")]
    pub guide_units: String,
}

impl BundleMeta {
    fn check_encoding(&self, file: &Path) -> Result<()> {
        if self.dtype != DTYPE || self.byte_order != BYTE_ORDER || self.layout != LAYOUT {
            return Err(Error::format(
                file,
                format!(
                    "unsupported encoding dtype={:?} byte_order={:?} layout={:?} (expected {DTYPE:?}, {BYTE_ORDER:?}, {LAYOUT:?})",
                    self.dtype, self.byte_order, self.layout
                ),
            ));
        }
        Ok(())
    }
}

/// Metadata of an external prediction bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub id: String,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    #[serde(default = "default_target_units")]
    pub units: String,
}

fn write_f32s(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32s(path: &Path, expected: usize) -> Result<Vec<f32>> {
    if !path.is_file() {
        return Err(Error::format(path, "missing payload file"));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::format(
            path,
            format!(
                "length mismatch: header implies {expected} values ({} bytes), payload has {} bytes",
                expected * 4,
                bytes.len()
            ),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            format!("non-finite value at index {pos}"),
        ));
    }
    Ok(values)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::format(path, "missing metadata file"));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_bundle(record: &PatchRecord, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    record.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = BundleMeta {
        id: record.id.clone(),
        alpha: record.alpha,
        height: record.height(),
        width: record.width(),
        guide_channels: record.guide.channels(),
        dtype: DTYPE.into(),
        byte_order: BYTE_ORDER.into(),
        layout: LAYOUT.into(),
        target_units: record.target.units().to_string(),
        guide_units: record.guide.units().to_string(),
    };
    write_json(&dir.join(META_FILE), &meta)?;
    write_f32s(&dir.join(GUIDE_FILE), record.guide.values())?;
    write_f32s(&dir.join(TARGET_FILE), record.target.values())?;
    write_f32s(&dir.join(SOURCE_FILE), record.source.values())
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<PatchRecord> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let meta: BundleMeta = read_json(&meta_path)?;
    meta.check_encoding(&meta_path)?;
    if meta.guide_channels == 0 || meta.height == 0 || meta.width == 0 {
        return Err(Error::format(&meta_path, "dimensions must be positive"));
    }
    check_divisible(meta.height, meta.width, meta.alpha)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let (h, w, c) = (meta.height, meta.width, meta.guide_channels);
    let (lh, lw) = (h / meta.alpha, w / meta.alpha);

    let guide = read_f32s(&dir.join(GUIDE_FILE), c * h * w)?;
    let target = read_f32s(&dir.join(TARGET_FILE), h * w)?;
    let source = read_f32s(&dir.join(SOURCE_FILE), lh * lw)?;
    PatchRecord::new(
        meta.id,
        Raster::new(c, h, w, guide, meta.guide_units)?,
        Raster::single(h, w, target, meta.target_units.clone())?,
        Raster::single(lh, lw, source, meta.target_units)?,
        meta.alpha,
    )
}

/// Sorted list of sub-directories of `root` that contain a `meta.json`.
pub fn list_bundles(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Reads every bundle under `root`, in directory-name order.
pub fn read_dataset(root: impl AsRef<Path>) -> Result<Vec<PatchRecord>> {
    list_bundles(root)?.iter().map(read_bundle).collect()
}

/// Writes each record to `root/<id>/`.
pub fn write_dataset(records: &[PatchRecord], root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    records
        .iter()
        .try_for_each(|r| write_bundle(r, root.join(&r.id)))
}

pub fn write_prediction(id: &str, prediction: &Raster, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if prediction.channels() != 1 {
        return Err(Error::Dimension(format!(
            "prediction {id} must be single-channel, got {}",
            prediction.channels()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = PredictionMeta {
        id: id.to_string(),
        height: prediction.height(),
        width: prediction.width(),
        dtype: DTYPE.into(),
        byte_order: BYTE_ORDER.into(),
        layout: LAYOUT.into(),
        units: prediction.units().to_string(),
    };
    write_json(&dir.join(META_FILE), &meta)?;
    write_f32s(&dir.join(PREDICTION_FILE), prediction.values())
}

pub fn read_prediction(dir: impl AsRef<Path>) -> Result<(String, Raster)> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let meta: PredictionMeta = read_json(&meta_path)?;
    if meta.dtype != DTYPE || meta.byte_order != BYTE_ORDER || meta.layout != LAYOUT {
        return Err(Error::format(&meta_path, "unsupported prediction encoding"));
    }
    let values = read_f32s(&dir.join(PREDICTION_FILE), meta.height * meta.width)?;
    let raster = Raster::single(meta.height, meta.width, values, meta.units)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    Ok((meta.id, raster))
}
