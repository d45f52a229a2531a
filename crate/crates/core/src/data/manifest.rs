//! Line-oriented dataset manifests.
//!
//! One record per pair, comma-separated, `#` starts a comment:
//!
//! ```text
//! # photo,sketch,identity[,left_x,left_y,right_x,right_y]
//! photos/p001.ppm,sketches/s001.pgm,subject-001
//! photos/p002.ppm,sketches/s002.pgm,subject-002,76.5,124.0,131.0,126.5
//! ```
//!
//! Relative paths resolve against the manifest's directory. Records that
//! carry eye coordinates are similarity-aligned before cropping; records
//! without them are treated as pre-aligned and only center-cropped.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{
    align_by_eyes, crop_center, load_image, to_grayscale, Dataset, PhotoSketchPair, Split,
    PHOTO_H, PHOTO_W, SKETCH_H, SKETCH_W,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub photo: PathBuf,
    pub sketch: PathBuf,
    pub identity: String,
    /// Eye centers in the raw photo, `((left_x, left_y), (right_x, right_y))`.
    pub eyes: Option<((f64, f64), (f64, f64))>,
}

/// Parse a manifest file into entries with resolved paths.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut entries = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fail = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 && fields.len() != 7 {
            return Err(fail(format!(
                "expected 3 fields (photo,sketch,identity) or 7 (plus eye coordinates), got {}",
                fields.len()
            )));
        }
        if fields[..3].iter().any(|f| f.is_empty()) {
            return Err(fail("empty photo/sketch/identity field".into()));
        }
        let eyes = if fields.len() == 7 {
            let mut nums = [0.0f64; 4];
            for (slot, field) in nums.iter_mut().zip(&fields[3..]) {
                *slot = field
                    .parse()
                    .map_err(|_| fail(format!("bad eye coordinate {field:?}")))?;
            }
            Some(((nums[0], nums[1]), (nums[2], nums[3])))
        } else {
            None
        };
        entries.push(ManifestEntry {
            photo: base.join(fields[0]),
            sketch: base.join(fields[1]),
            identity: fields[2].to_string(),
            eyes,
        });
    }
    Ok(entries)
}

/// Write a manifest; paths are emitted as given.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[(String, String, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::from("# photo,sketch,identity\n");
    for (photo, sketch, identity) in entries {
        buf.push_str(&format!("{photo},{sketch},{identity}\n"));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load and preprocess every pair named by a manifest.
///
/// Photos with eye coordinates are aligned onto the 250×200 canvas first;
/// everything is then center-cropped to the canonical 200×155 photo and
/// 188×143 sketch. Color sketches are converted to grayscale.
pub fn load_dataset(manifest_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let entries = parse_manifest(manifest_path)?;
    let mut pairs = Vec::with_capacity(entries.len());
    for entry in entries {
        let mut photo = load_image(&entry.photo)?;
        if photo.channels() != 3 {
            return Err(Error::Dimension(format!(
                "{}: photos must be color (3 channels), got {:?}",
                entry.photo.display(),
                photo.shape()
            )));
        }
        if let Some((left, right)) = entry.eyes {
            photo = align_by_eyes(&photo, left, right)?;
        }
        let photo = crop_center(&photo, PHOTO_H, PHOTO_W)?;

        let sketch = load_image(&entry.sketch)?;
        let sketch = if sketch.channels() == 3 {
            to_grayscale(&sketch)?
        } else {
            sketch
        };
        let sketch = crop_center(&sketch, SKETCH_H, SKETCH_W)?;

        pairs.push(PhotoSketchPair::new(photo, sketch, entry.identity)?);
    }
    Dataset::new(pairs, split)
}
