//! Binary netpbm (P5/P6) reading and writing.
//!
//! Grayscale PGM files decode to `1×H×W` tensors and color PPM files to
//! channel-major `3×H×W` tensors; sample values are kept raw on the 0–255
//! scale, and only `maxval <= 255` (single-byte samples) is accepted.
//! Writers clamp to [0, 255] and round half to even.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Load a binary PGM (P5) or PPM (P6) file.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::CorruptImage {
            path: path.to_path_buf(),
            reason: "file is empty".into(),
        });
    }
    let corrupt = |reason: &str| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    };

    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(magic @ [b'P', b'1'..=b'7']) => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                reason: format!(
                    "{} images are not supported; use binary PGM (P5) or PPM (P6)",
                    String::from_utf8_lossy(magic)
                ),
            })
        }
        _ => return Err(corrupt("missing netpbm magic number")),
    };

    let mut pos = 2usize;
    let next_token = |pos: &mut usize| -> Result<usize> {
        // Skip whitespace and '#' comments between header fields.
        loop {
            match bytes.get(*pos) {
                Some(b) if b.is_ascii_whitespace() => *pos += 1,
                Some(b'#') => {
                    while let Some(b) = bytes.get(*pos) {
                        *pos += 1;
                        if *b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(corrupt("truncated header")),
            }
        }
        let start = *pos;
        while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
            *pos += 1;
        }
        if start == *pos {
            return Err(corrupt("expected an unsigned integer in the header"));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("unreadable header integer"))
    };

    let width = next_token(&mut pos)?;
    let height = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if width == 0 || height == 0 {
        return Err(corrupt("zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            reason: format!("maxval {maxval} is outside the single-byte range"),
        });
    }
    // Exactly one whitespace byte separates the header from the samples.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(corrupt("missing separator before pixel data"));
    }
    pos += 1;

    let expected = width * height * channels;
    let data = &bytes[pos.min(bytes.len())..];
    if data.len() < expected {
        return Err(corrupt(&format!(
            "pixel data truncated: wanted {expected} bytes, found {}",
            data.len()
        )));
    }

    // Netpbm samples are interleaved per pixel; tensors are channel-major.
    let mut out = vec![0.0f32; expected];
    let plane = width * height;
    for (idx, chunk) in data[..expected].chunks_exact(channels).enumerate() {
        for (c, &b) in chunk.iter().enumerate() {
            out[c * plane + idx] = b as f32;
        }
    }
    Tensor::new(channels, height, width, out)
}

fn quantize(v: f32) -> u8 {
    v.clamp(0.0, 255.0).round_ties_even() as u8
}

/// Write a single-channel tensor as a binary PGM (P5) file.
pub fn save_pgm(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    if img.channels() != 1 {
        return Err(Error::Dimension(format!(
            "PGM wants 1 channel, got {:?}",
            img.shape()
        )));
    }
    let mut buf = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    buf.extend(img.data().iter().map(|&v| quantize(v)));
    write_file(path, &buf)
}

/// Write a three-channel tensor as a binary PPM (P6) file.
pub fn save_ppm(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    if img.channels() != 3 {
        return Err(Error::Dimension(format!(
            "PPM wants 3 channels, got {:?}",
            img.shape()
        )));
    }
    let mut buf = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..3 {
                buf.push(quantize(img.at(c, y, x)));
            }
        }
    }
    write_file(path, &buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_pgm_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        std::fs::write(&path, [b"P5\n2 2\n255\n".as_slice(), &[0, 85, 170, 255]].concat()).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.shape(), (1, 2, 2));
        assert_eq!(img.data(), &[0.0, 85.0, 170.0, 255.0]);
    }

    #[test]
    fn decodes_ppm_channel_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        // One row, two pixels: (1,2,3) and (4,5,6).
        std::fs::write(&path, [b"P6\n2 1\n255\n".as_slice(), &[1, 2, 3, 4, 5, 6]].concat()).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.shape(), (3, 1, 2));
        assert_eq!(img.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(
            &path,
            [b"P5\n# a comment\n2 1\n# another\n255\n".as_slice(), &[9, 8]].concat(),
        )
        .unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.data(), &[9.0, 8.0]);
    }

    #[test]
    fn distinct_errors_for_missing_unsupported_corrupt() {
        let dir = tempfile::tempdir().unwrap();

        assert!(matches!(
            load_image(dir.path().join("absent.pgm")),
            Err(Error::Io { .. })
        ));

        let ascii = dir.path().join("ascii.pgm");
        std::fs::write(&ascii, b"P2\n1 1\n255\n7\n").unwrap();
        assert!(matches!(load_image(&ascii), Err(Error::UnsupportedImage { .. })));

        let empty = dir.path().join("empty.pgm");
        std::fs::write(&empty, b"").unwrap();
        assert!(matches!(load_image(&empty), Err(Error::CorruptImage { .. })));

        let short = dir.path().join("short.pgm");
        std::fs::write(&short, [b"P5\n4 4\n255\n".as_slice(), &[1, 2, 3]].concat()).unwrap();
        assert!(matches!(load_image(&short), Err(Error::CorruptImage { .. })));
    }

    #[test]
    fn round_trips_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.ppm");
        let img = Tensor::from_fn(3, 5, 4, |c, y, x| ((c * 89 + y * 17 + x * 5) % 256) as f32).unwrap();
        save_ppm(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img, "integral values survive exactly");
    }

    #[test]
    fn writer_clamps_and_rounds_half_even() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.pgm");
        let img = Tensor::new(1, 1, 4, vec![-5.0f32, 0.5, 1.5, 300.0]).unwrap();
        save_pgm(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        // 0.5 rounds to 0 and 1.5 to 2 under round-half-even.
        assert_eq!(back.data(), &[0.0, 0.0, 2.0, 255.0]);
    }
}
