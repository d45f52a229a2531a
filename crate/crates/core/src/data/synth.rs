//! Deterministic synthetic photo-sketch pairs for dataset-free testing.
//!
//! Each photo is a smooth random background (soft color blobs) with a few
//! strongly contrasting per-identity shapes on top, so identities are far
//! apart in pixel space. Each sketch is a fixed local transform of its
//! photo — grayscale, edge emphasis, contrast stretch — which a small
//! convolutional stack can learn, and which makes the verification task
//! solvable by construction: a subject's sketch is exactly the transform of
//! its own photo and far from every other subject's.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{crop_center, to_grayscale, Dataset, PhotoSketchPair, Split};
use super::{PHOTO_H, PHOTO_W};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Generate `n` deterministic pairs; the same seed is bit-identical.
pub fn synth_pairs(seed: u64, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Argument("synthetic datasets need n >= 1 pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for idx in 0..n {
        let photo = synth_photo(&mut rng);
        let sketch = synthetic_sketch_of(&photo)?;
        pairs.push(PhotoSketchPair::new(
            photo,
            sketch,
            format!("synth-{:04}", idx + 1),
        )?);
    }
    Dataset::new(pairs, Split::Train)
}

/// The pseudo-artistic transform a synthetic sketch is built with:
/// luma, plus Manhattan gradient magnitude for edge emphasis, then a fixed
/// contrast stretch about mid-gray, center-cropped 12 pixels per side.
///
/// Recomputing it on a stored photo reproduces the stored sketch exactly.
pub fn synthetic_sketch_of(photo: &Tensor<f32>) -> Result<Tensor<f32>> {
    let gray = to_grayscale(photo)?;
    let (h, w) = (gray.height(), gray.width());
    let full = Tensor::from_fn(1, h, w, |_, y, x| {
        let gx = if x > 0 && x + 1 < w {
            (gray.at(0, y, x + 1) - gray.at(0, y, x - 1)) * 0.5
        } else {
            0.0
        };
        let gy = if y > 0 && y + 1 < h {
            (gray.at(0, y + 1, x) - gray.at(0, y - 1, x)) * 0.5
        } else {
            0.0
        };
        let edges = gx.abs() + gy.abs();
        let toned = 0.5 * gray.at(0, y, x) + 1.5 * edges;
        (1.25 * (toned - 127.5) + 127.5).clamp(0.0, 255.0)
    })?;
    crop_center(&full, h - 12, w - 12)
}

fn synth_photo(rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let mut planes = vec![vec![0.0f32; PHOTO_H * PHOTO_W]; 3];

    // Smooth background: per-channel base level plus soft color blobs.
    let base: Vec<f32> = (0..3).map(|_| rng.random_range(70.0..180.0)).collect();
    for (c, plane) in planes.iter_mut().enumerate() {
        plane.fill(base[c]);
    }
    for _ in 0..6 {
        let cy = rng.random_range(0.0..PHOTO_H as f64);
        let cx = rng.random_range(0.0..PHOTO_W as f64);
        let sigma = rng.random_range(12.0..34.0);
        let amp = rng.random_range(-60.0..60.0);
        let mix: Vec<f64> = (0..3).map(|_| rng.random_range(0.25..1.0)).collect();
        let radius = (3.0 * sigma) as i64;
        let y0 = ((cy as i64) - radius).max(0) as usize;
        let y1 = ((cy as i64) + radius).min(PHOTO_H as i64 - 1) as usize;
        let x0 = ((cx as i64) - radius).max(0) as usize;
        let x1 = ((cx as i64) + radius).min(PHOTO_W as i64 - 1) as usize;
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let g = amp * (-(dy * dy + dx * dx) * inv).exp();
                for c in 0..3 {
                    planes[c][y * PHOTO_W + x] += (g * mix[c]) as f32;
                }
            }
        }
    }

    // Distinctive identity marks: hard-edged rectangles and ellipses whose
    // layout varies strongly between subjects. Two of them are anchored
    // near the image center so that center crops down to ~33 pixels still
    // see identity-specific content.
    for shape in 0..5usize {
        let h: usize = rng.random_range(14..36);
        let w: usize = rng.random_range(14..36);
        let (top, left) = if shape < 2 {
            let jy: i64 = rng.random_range(-13..=13);
            let jx: i64 = rng.random_range(-13..=13);
            let top = (PHOTO_H as i64 / 2 + jy - h as i64 / 2).clamp(0, (PHOTO_H - h) as i64);
            let left = (PHOTO_W as i64 / 2 + jx - w as i64 / 2).clamp(0, (PHOTO_W - w) as i64);
            (top as usize, left as usize)
        } else {
            (
                rng.random_range(0..PHOTO_H - h),
                rng.random_range(0..PHOTO_W - w),
            )
        };
        let color: Vec<f32> = (0..3).map(|_| rng.random_range(0.0..255.0)).collect();
        for y in top..top + h {
            for x in left..left + w {
                for c in 0..3 {
                    planes[c][y * PHOTO_W + x] = color[c];
                }
            }
        }
    }
    for shape in 0..2 {
        let ry = rng.random_range(7.0..20.0);
        let rx = rng.random_range(7.0..20.0);
        let (cy, cx) = if shape == 0 {
            (
                PHOTO_H as f64 / 2.0 + rng.random_range(-12.0..12.0),
                PHOTO_W as f64 / 2.0 + rng.random_range(-12.0..12.0),
            )
        } else {
            (
                rng.random_range(ry..PHOTO_H as f64 - ry),
                rng.random_range(rx..PHOTO_W as f64 - rx),
            )
        };
        let color: Vec<f32> = (0..3).map(|_| rng.random_range(0.0..255.0)).collect();
        let y0 = (cy - ry).max(0.0) as usize;
        let y1 = ((cy + ry) as usize).min(PHOTO_H - 1);
        let x0 = (cx - rx).max(0.0) as usize;
        let x1 = ((cx + rx) as usize).min(PHOTO_W - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let ny = (y as f64 - cy) / ry;
                let nx = (x as f64 - cx) / rx;
                if ny * ny + nx * nx <= 1.0 {
                    for c in 0..3 {
                        planes[c][y * PHOTO_W + x] = color[c];
                    }
                }
            }
        }
    }

    let mut data = Vec::with_capacity(3 * PHOTO_H * PHOTO_W);
    for plane in &planes {
        data.extend(plane.iter().map(|v| v.clamp(0.0, 255.0)));
    }
    Tensor::new(3, PHOTO_H, PHOTO_W, data).expect("fixed geometry")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SKETCH_H, SKETCH_W};
    use crate::loss::pair_sqdist;

    #[test]
    fn same_seed_is_bit_identical() {
        let a = synth_pairs(77, 4).unwrap();
        let b = synth_pairs(77, 4).unwrap();
        assert_eq!(a, b);
        let c = synth_pairs(78, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pairs_have_canonical_shapes_and_unique_identities() {
        let ds = synth_pairs(5, 10).unwrap();
        assert_eq!(ds.len(), 10);
        for pair in ds.pairs() {
            assert!(pair.is_canonical());
            assert_eq!(pair.photo.shape(), (3, PHOTO_H, PHOTO_W));
            assert_eq!(pair.sketch.shape(), (1, SKETCH_H, SKETCH_W));
        }
        assert_eq!(ds.pairs()[0].identity, "synth-0001");
        assert_eq!(ds.pairs()[9].identity, "synth-0010");
    }

    #[test]
    fn rejects_empty_request() {
        assert!(synth_pairs(1, 0).is_err());
    }

    /// Solvability of the verification task: every stored sketch is nearest
    /// to the recomputed transform of its own photo.
    #[test]
    fn sketches_are_nearest_their_own_transform() {
        let ds = synth_pairs(42, 10).unwrap();
        let transforms: Vec<_> = ds
            .pairs()
            .iter()
            .map(|p| synthetic_sketch_of(&p.photo).unwrap())
            .collect();
        for (i, pair) in ds.pairs().iter().enumerate() {
            let own = pair_sqdist(&pair.sketch, &transforms[i]).unwrap();
            assert_eq!(own, 0.0, "sketch {i} must equal its own transform");
            for (j, other) in transforms.iter().enumerate() {
                if i != j {
                    let cross = pair_sqdist(&pair.sketch, other).unwrap();
                    assert!(
                        cross > own,
                        "sketch {i} should be far from transform {j} (cross {cross})"
                    );
                }
            }
        }
    }
}
