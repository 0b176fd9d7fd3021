//! 8-bit raster image read/write: PGM for single-channel, PPM or PNG for
//! color. PGM/PPM are parsed by hand so malformed files fail with the byte
//! offset of the problem; PNG goes through the `image` crate.
//!
//! Pixels travel as `[h, w, c]` tensors in [0, 1]; writing quantizes with
//! round-half-up of `255 * clamp(v, 0, 1)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Round-half-up 8-bit quantization of a unit-range value.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

/// Writes `[h, w, c]` pixels to `path`, picking the format from the
/// extension: `.pgm` (c = 1), `.ppm` (c = 3), `.png` (c = 1 or 3).
pub fn write_image(path: &Path, pixels: &Tensor) -> Result<()> {
    let (h, w, c) = image_dims(pixels)?;
    let bytes: Vec<u8> = pixels.data().iter().map(|&v| quantize(v)).collect();
    match extension_of(path)? {
        Format::Pgm => {
            require_channels(path, c, 1)?;
            let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&bytes);
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        Format::Ppm => {
            require_channels(path, c, 3)?;
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&bytes);
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        Format::Png => {
            let color = match c {
                1 => image::ExtendedColorType::L8,
                3 => image::ExtendedColorType::Rgb8,
                other => {
                    return Err(Error::invalid(format!(
                        "png supports 1 or 3 channels, got {other}"
                    )))
                }
            };
            image::save_buffer(path, &bytes, w as u32, h as u32, color).map_err(|e| {
                Error::Image {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                }
            })
        }
    }
}

/// Reads an image into `[h, w, c]` with values in [0, 1]; c is 1 for PGM and
/// grayscale PNG, 3 for PPM and color PNG.
pub fn read_image(path: &Path) -> Result<Tensor> {
    match extension_of(path)? {
        Format::Pgm => read_netpbm(path, b'5', 1),
        Format::Ppm => read_netpbm(path, b'6', 3),
        Format::Png => {
            let img = image::open(path).map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let (bytes, h, w, c) = match img {
                image::DynamicImage::ImageLuma8(g) => {
                    let (w, h) = (g.width() as usize, g.height() as usize);
                    (g.into_raw(), h, w, 1)
                }
                other => {
                    let rgb = other.to_rgb8();
                    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                    (rgb.into_raw(), h, w, 3)
                }
            };
            Tensor::new(
                vec![h, w, c],
                bytes.iter().map(|&b| b as f64 / 255.0).collect(),
            )
        }
    }
}

enum Format {
    Pgm,
    Ppm,
    Png,
}

fn extension_of(path: &Path) -> Result<Format> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("pgm") => Ok(Format::Pgm),
        Some("ppm") => Ok(Format::Ppm),
        Some("png") => Ok(Format::Png),
        other => Err(Error::invalid(format!(
            "unsupported image extension {other:?} on {}; use pgm, ppm, or png",
            path.display()
        ))),
    }
}

fn image_dims(pixels: &Tensor) -> Result<(usize, usize, usize)> {
    match pixels.shape() {
        [h, w, c] if *h > 0 && *w > 0 => Ok((*h, *w, *c)),
        other => Err(Error::shape(format!(
            "image tensor must be non-empty [h, w, c], got {other:?}"
        ))),
    }
}

fn require_channels(path: &Path, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{} requires {want} channel(s), got {got}",
            path.display()
        )))
    }
}

/// Byte-level netpbm parser shared by PGM (P5) and PPM (P6).
fn read_netpbm(path: &Path, magic_digit: u8, channels: usize) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos;
    let fail = |pos: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: pos,
        message,
    };

    if bytes.len() < 2 || bytes[0] != b'P' || bytes[1] != magic_digit {
        return Err(fail(
            0,
            format!("expected magic P{}", magic_digit as char),
        ));
    }
    pos = 2;

    // each call skips whitespace and '#' comments, then returns the field's
    // starting offset alongside its value
    let read_field = |pos: &mut usize| -> Result<(usize, usize)> {
        loop {
            match bytes.get(*pos) {
                Some(b' ' | b'\t' | b'\r' | b'\n') => *pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(*pos), None | Some(b'\n')) {
                        *pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = *pos;
        while matches!(bytes.get(*pos), Some(b'0'..=b'9')) {
            *pos += 1;
        }
        if *pos == start {
            return Err(fail(start, "expected a decimal header field".into()));
        }
        let value = std::str::from_utf8(&bytes[start..*pos])
            .expect("digits are utf8")
            .parse()
            .map_err(|_| fail(start, "header field overflows usize".into()))?;
        Ok((start, value))
    };

    let (_, w) = read_field(&mut pos)?;
    let (_, h) = read_field(&mut pos)?;
    let (maxval_at, maxval) = read_field(&mut pos)?;
    if !(1..=255).contains(&maxval) {
        return Err(fail(
            maxval_at,
            format!("only 8-bit data supported, maxval {maxval} out of 1..=255"),
        ));
    }
    match bytes.get(pos) {
        Some(b' ' | b'\t' | b'\r' | b'\n') => pos += 1,
        _ => return Err(fail(pos, "expected single whitespace before payload".into())),
    }

    let expected = w * h * channels;
    let actual = bytes.len() - pos;
    if actual != expected {
        return Err(fail(
            pos,
            format!("payload has {actual} bytes, expected {expected}"),
        ));
    }
    let scale = 1.0 / maxval as f64;
    Tensor::new(
        vec![h, w, channels],
        bytes[pos..].iter().map(|&b| b as f64 * scale).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_gray_quantizes_to_128() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.5), 255);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        write_image(&path, &Tensor::full(&[2, 3, 1], 0.5)).unwrap();
        let raw = std::fs::read(&path).unwrap();
        let payload = &raw[raw.len() - 6..];
        assert!(payload.iter().all(|&b| b == 128), "payload {payload:?}");
    }

    #[test]
    fn ppm_roundtrip_is_exact_on_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let t = Tensor::from_fn(&[2, 2, 3], |i| (i * 19 % 256) as f64 / 255.0);
        write_image(&path, &t).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn png_roundtrip_is_exact_on_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let t = Tensor::from_fn(&[3, 5, 3], |i| (i * 7 % 256) as f64 / 255.0);
        write_image(&path, &t).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 1\n# another\n255\n\x00\xff").unwrap();
        let t = read_image(&path).unwrap();
        assert_eq!(t.shape(), &[1, 2, 1]);
        assert_eq!(t.data(), &[0.0, 1.0]);
    }

    #[test]
    fn pgm_rejects_wide_maxval_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n2 1\n65535\n\x00\x00\x00\x00").unwrap();
        match read_image(&path).unwrap_err() {
            Error::Parse { offset, message, .. } => {
                assert_eq!(offset, 7);
                assert!(message.contains("65535"), "got: {message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn truncated_ppm_reports_expected_and_actual() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        std::fs::write(&path, b"P6\n2 1\n255\n\x01\x02\x03").unwrap();
        let err = read_image(&path).unwrap_err().to_string();
        assert!(err.contains("3 bytes, expected 6"), "got: {err}");
    }

    #[test]
    fn channel_and_extension_mismatches_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Tensor::zeros(&[2, 2, 3]);
        assert!(write_image(&dir.path().join("x.pgm"), &rgb).is_err());
        assert!(write_image(&dir.path().join("x.bmp"), &rgb).is_err());
        let gray = Tensor::zeros(&[2, 2, 1]);
        assert!(write_image(&dir.path().join("x.ppm"), &gray).is_err());
    }
}
