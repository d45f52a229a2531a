//! Image I/O, the preprocessing pipeline, XY-channel augmentation, dataset
//! manifests, and a synthetic photo-sketch generator.
//!
//! The canonical pipeline mirrors the preprocessing of the face-sketch
//! datasets this engine targets: raw portraits are similarity-aligned so the
//! eye centers land on fixed positions in a 250×200 (H×W) canvas, the
//! 200×155 center is cropped to drop the black border introduced by the
//! warp, and target sketches are cropped to 188×143 to match the network
//! output after its 12-pixel border shrink.

mod manifest;
mod netpbm;
mod synth;

pub use manifest::{load_dataset, parse_manifest, write_manifest, ManifestEntry};
pub use netpbm::{load_image, save_pgm, save_ppm};
pub use synth::{synth_pairs, synthetic_sketch_of};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Aligned canvas size (H×W) produced by [`align_by_eyes`].
pub const ALIGN_H: usize = 250;
pub const ALIGN_W: usize = 200;
/// Canonical photo crop (H×W).
pub const PHOTO_H: usize = 200;
pub const PHOTO_W: usize = 155;
/// Canonical sketch crop (H×W), 12 pixels smaller per side than the photo.
pub const SKETCH_H: usize = 188;
pub const SKETCH_W: usize = 143;
/// Canonical eye centers on the aligned canvas, as (x, y).
pub const CANONICAL_LEFT_EYE: (f64, f64) = (75.0, 125.0);
pub const CANONICAL_RIGHT_EYE: (f64, f64) = (125.0, 125.0);

/// One subject: an aligned photo, the artist's sketch, and an identity.
///
/// The constructor checks channel counts and the 0–255 pixel range; exact
/// canonical sizes are enforced where the full-size pipeline needs them
/// (see [`is_canonical`](Self::is_canonical)), so reduced-size pairs remain
/// usable for desk-scale experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotoSketchPair {
    pub photo: Tensor<f32>,
    pub sketch: Tensor<f32>,
    pub identity: String,
}

impl PhotoSketchPair {
    pub fn new(photo: Tensor<f32>, sketch: Tensor<f32>, identity: impl Into<String>) -> Result<Self> {
        if photo.channels() != 3 {
            return Err(Error::Dimension(format!(
                "photo must have 3 channels, got {:?}",
                photo.shape()
            )));
        }
        if sketch.channels() != 1 {
            return Err(Error::Dimension(format!(
                "sketch must have 1 channel, got {:?}",
                sketch.shape()
            )));
        }
        for (name, t) in [("photo", &photo), ("sketch", &sketch)] {
            if t.data().iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 255.0) {
                return Err(Error::Argument(format!(
                    "{name} pixel values must lie in [0, 255]"
                )));
            }
        }
        Ok(PhotoSketchPair {
            photo,
            sketch,
            identity: identity.into(),
        })
    }

    /// Whether the pair carries the full-size canonical shapes.
    pub fn is_canonical(&self) -> bool {
        self.photo.shape() == (3, PHOTO_H, PHOTO_W) && self.sketch.shape() == (1, SKETCH_H, SKETCH_W)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A list of pairs with unique identities.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pairs: Vec<PhotoSketchPair>,
    split: Split,
}

impl Dataset {
    pub fn new(pairs: Vec<PhotoSketchPair>, split: Split) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for pair in &pairs {
            if !seen.insert(pair.identity.as_str()) {
                return Err(Error::Argument(format!(
                    "duplicate identity {:?} in dataset",
                    pair.identity
                )));
            }
        }
        Ok(Dataset { pairs, split })
    }

    pub fn pairs(&self) -> &[PhotoSketchPair] {
        &self.pairs
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The first `n` pairs as a new dataset (for training-set-size sweeps).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.pairs.len() {
            return Err(Error::Argument(format!(
                "cannot take {n} pairs from a dataset of {}",
                self.pairs.len()
            )));
        }
        Dataset::new(self.pairs[..n].to_vec(), self.split)
    }
}

/// Similarity-align a portrait so its eye centers land on the canonical
/// positions of a 250×200 (H×W) canvas.
///
/// Eye coordinates are `(x, y)` pixel positions in the source image. The
/// output is sampled bilinearly through the inverse transform; pixels that
/// fall outside the source are black.
pub fn align_by_eyes(
    img: &Tensor<f32>,
    left_eye: (f64, f64),
    right_eye: (f64, f64),
) -> Result<Tensor<f32>> {
    if img.channels() != 3 {
        return Err(Error::Dimension(format!(
            "alignment expects a 3-channel photo, got {:?}",
            img.shape()
        )));
    }
    let (lx, ly) = left_eye;
    let (rx, ry) = right_eye;
    if lx == rx && ly == ry {
        return Err(Error::Argument("eye centers are coincident".into()));
    }
    let inside = |x: f64, y: f64| {
        x >= 0.0 && y >= 0.0 && x <= (img.width() - 1) as f64 && y <= (img.height() - 1) as f64
    };
    if !inside(lx, ly) || !inside(rx, ry) {
        return Err(Error::Argument(format!(
            "eye centers ({lx}, {ly}) / ({rx}, {ry}) must lie inside the {}x{} image",
            img.height(),
            img.width()
        )));
    }

    // The similarity transform is one complex multiply-add: dst = a·src + b,
    // with a and b solved from the two eye correspondences.
    let (dlx, dly) = CANONICAL_LEFT_EYE;
    let (drx, dry) = CANONICAL_RIGHT_EYE;
    let (sx, sy) = (rx - lx, ry - ly);
    let (tx, ty) = (drx - dlx, dry - dly);
    let denom = sx * sx + sy * sy;
    // a = (dstR − dstL) / (srcR − srcL), complex division.
    let ar = (tx * sx + ty * sy) / denom;
    let ai = (ty * sx - tx * sy) / denom;
    // b = dstL − a · srcL.
    let br = dlx - (ar * lx - ai * ly);
    let bi = dly - (ar * ly + ai * lx);
    // Inverse: src = (dst − b) / a.
    let a2 = ar * ar + ai * ai;

    Tensor::from_fn(3, ALIGN_H, ALIGN_W, |c, y, x| {
        let dx = x as f64 - br;
        let dy = y as f64 - bi;
        let src_x = (dx * ar + dy * ai) / a2;
        let src_y = (dy * ar - dx * ai) / a2;
        sample_bilinear(img, c, src_x, src_y)
    })
    .map(|t| t.clamp_values(0.0, 255.0))
}

/// Bilinear sample at a fractional source position; zero outside the image.
fn sample_bilinear(img: &Tensor<f32>, c: usize, x: f64, y: f64) -> f32 {
    if x < 0.0 || y < 0.0 || x > (img.width() - 1) as f64 || y > (img.height() - 1) as f64 {
        return 0.0;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let top = img.at(c, y0, x0) * (1.0 - fx) + img.at(c, y0, x1) * fx;
    let bottom = img.at(c, y1, x0) * (1.0 - fx) + img.at(c, y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Centered crop. Odd margins give the extra pixel to the bottom/right.
pub fn crop_center<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument("crop size must be >= 1".into()));
    }
    if out_h > img.height() || out_w > img.width() {
        return Err(Error::Dimension(format!(
            "cannot crop {out_h}x{out_w} from {}x{}",
            img.height(),
            img.width()
        )));
    }
    let top = (img.height() - out_h) / 2;
    let left = (img.width() - out_w) / 2;
    Tensor::from_fn(img.channels(), out_h, out_w, |c, y, x| {
        img.at(c, top + y, left + x)
    })
}

/// Append the two coordinate channels: channel 4 holds the row index and
/// channel 5 the column index, both scaled to [0, 255] so they match image
/// magnitudes.
pub fn add_xy_channels<T: Scalar>(photo: &Tensor<T>) -> Result<Tensor<T>> {
    if photo.channels() != 3 {
        return Err(Error::Dimension(format!(
            "XY augmentation expects a 3-channel photo, got {:?}",
            photo.shape()
        )));
    }
    let (h, w) = (photo.height(), photo.width());
    let row_scale = if h > 1 { 255.0 / (h - 1) as f64 } else { 0.0 };
    let col_scale = if w > 1 { 255.0 / (w - 1) as f64 } else { 0.0 };
    Tensor::from_fn(5, h, w, |c, y, x| match c {
        0..=2 => photo.at(c, y, x),
        3 => T::from_f64_lossy(y as f64 * row_scale),
        _ => T::from_f64_lossy(x as f64 * col_scale),
    })
}

/// Luma conversion `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale<T: Scalar>(photo: &Tensor<T>) -> Result<Tensor<T>> {
    if photo.channels() != 3 {
        return Err(Error::Dimension(format!(
            "grayscale conversion expects 3 channels, got {:?}",
            photo.shape()
        )));
    }
    let (wr, wg, wb) = (
        T::from_f64_lossy(0.299),
        T::from_f64_lossy(0.587),
        T::from_f64_lossy(0.114),
    );
    Tensor::from_fn(1, photo.height(), photo.width(), |_, y, x| {
        wr * photo.at(0, y, x) + wg * photo.at(1, y, x) + wb * photo.at(2, y, x)
    })
}

/// Network inputs for a dataset: XY-augmented 5-channel photos when the
/// architecture asks for 5 input channels, raw RGB for 3.
pub fn network_inputs(dataset: &Dataset, in_channels: usize) -> Result<Vec<Tensor<f32>>> {
    match in_channels {
        5 => dataset.pairs().iter().map(|p| add_xy_channels(&p.photo)).collect(),
        3 => Ok(dataset.pairs().iter().map(|p| p.photo.clone()).collect()),
        other => Err(Error::Argument(format!(
            "photo pipelines support 3- or 5-channel inputs, the architecture wants {other}"
        ))),
    }
}
