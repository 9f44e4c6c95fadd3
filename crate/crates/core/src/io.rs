//! Image file I/O: binary PGM (P5) and PNG, 8- and 16-bit grayscale.
//!
//! Reading converts samples to float in `[0, peak]` with peak 255 or 65535
//! depending on bit depth. Writing clamps to `[0, peak]` and rounds half up.

use std::fs;
use std::path::Path;

use crate::dataprox::Mask;
use crate::error::{Error, Result};
use crate::image::Image;

fn round_half_up(v: f64, max: f64) -> u64 {
    (v.clamp(0.0, max) + 0.5).floor() as u64
}

/// Reads a binary PGM (P5) file; maxval <= 255 maps to peak 255, larger
/// maxvals to peak 65535 with big-endian 16-bit samples.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::ImageFormat {
        path: path.to_path_buf(),
        message: msg,
    })
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> std::result::Result<String, String> {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        return Err("not a binary PGM (P5) file".into());
    }
    let width: usize = token(bytes)?.parse().map_err(|_| "bad width")?;
    let height: usize = token(bytes)?.parse().map_err(|_| "bad height")?;
    let maxval: u32 = token(bytes)?.parse().map_err(|_| "bad maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // single whitespace byte after maxval
    pos += 1;
    let n = width * height;
    let (peak, data) = if maxval <= 255 {
        if bytes.len() < pos + n {
            return Err("truncated pixel data".into());
        }
        (
            255.0,
            bytes[pos..pos + n].iter().map(|&b| b as f64).collect::<Vec<_>>(),
        )
    } else {
        if bytes.len() < pos + 2 * n {
            return Err("truncated pixel data".into());
        }
        (
            65535.0,
            bytes[pos..pos + 2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
                .collect::<Vec<_>>(),
        )
    };
    Image::from_vec(width, height, peak, data).map_err(|e| e.to_string())
}

/// Writes a binary PGM; peak <= 255 produces an 8-bit file, anything larger a
/// 16-bit file.
pub fn write_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(img);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_pgm(img: &Image) -> Vec<u8> {
    let sixteen = img.peak() > 255.0;
    let maxval: u32 = if sixteen { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    if sixteen {
        for &v in img.data() {
            let q = round_half_up(v, 65535.0) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    } else {
        for &v in img.data() {
            out.push(round_half_up(v, 255.0) as u8);
        }
    }
    out
}

/// Reads a PNG as grayscale; color inputs are rejected here (the CLI splits
/// channels via [`read_png_channels`]).
pub fn read_png_gray(path: impl AsRef<Path>) -> Result<Image> {
    let channels = read_png_channels(path.as_ref())?;
    if channels.len() != 1 {
        return Err(Error::ImageFormat {
            path: path.as_ref().to_path_buf(),
            message: format!("expected grayscale PNG, found {} channels", channels.len()),
        });
    }
    Ok(channels.into_iter().next().unwrap())
}

/// Reads a PNG into one image per channel (1 for grayscale, 3 for RGB);
/// alpha, if present, is dropped.
pub fn read_png_channels(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|e| Error::ImageFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    use image::DynamicImage::*;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let build = |peak: f64, planes: Vec<Vec<f64>>| -> Result<Vec<Image>> {
        planes
            .into_iter()
            .map(|p| Image::from_vec(w, h, peak, p))
            .collect()
    };
    match dynimg {
        ImageLuma8(buf) => build(255.0, vec![buf.pixels().map(|p| p.0[0] as f64).collect()]),
        ImageLumaA8(buf) => build(255.0, vec![buf.pixels().map(|p| p.0[0] as f64).collect()]),
        ImageLuma16(buf) => build(65535.0, vec![buf.pixels().map(|p| p.0[0] as f64).collect()]),
        ImageLumaA16(buf) => build(65535.0, vec![buf.pixels().map(|p| p.0[0] as f64).collect()]),
        ImageRgb8(buf) => build(
            255.0,
            (0..3)
                .map(|c| buf.pixels().map(|p| p.0[c] as f64).collect())
                .collect(),
        ),
        ImageRgba8(buf) => build(
            255.0,
            (0..3)
                .map(|c| buf.pixels().map(|p| p.0[c] as f64).collect())
                .collect(),
        ),
        ImageRgb16(buf) => build(
            65535.0,
            (0..3)
                .map(|c| buf.pixels().map(|p| p.0[c] as f64).collect())
                .collect(),
        ),
        other => {
            let rgb = other.to_rgb8();
            build(
                255.0,
                (0..3)
                    .map(|c| rgb.pixels().map(|p| p.0[c] as f64).collect())
                    .collect(),
            )
        }
    }
}

/// Writes a grayscale PNG; peak <= 255 produces 8-bit, larger 16-bit.
pub fn write_png_gray(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let result = if img.peak() > 255.0 {
        let buf: Vec<u16> = img
            .data()
            .iter()
            .map(|&v| round_half_up(v, 65535.0) as u16)
            .collect();
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, buf)
            .expect("buffer size")
            .save(path)
    } else {
        let buf: Vec<u8> = img
            .data()
            .iter()
            .map(|&v| round_half_up(v, 255.0) as u8)
            .collect();
        image::ImageBuffer::<image::Luma<u8>, _>::from_raw(w, h, buf)
            .expect("buffer size")
            .save(path)
    };
    result.map_err(|e| Error::ImageFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes an RGB PNG from three channel images (8-bit only).
pub fn write_png_rgb(channels: &[Image; 3], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (channels[0].width(), channels[0].height());
    for c in channels.iter() {
        if c.width() != w || c.height() != h {
            return Err(Error::dims(
                "png channels",
                channels[0].shape_string(),
                c.shape_string(),
            ));
        }
    }
    let mut buf = Vec::with_capacity(w * h * 3);
    for p in 0..w * h {
        for c in channels.iter() {
            buf.push(round_half_up(c.data()[p], 255.0) as u8);
        }
    }
    image::ImageBuffer::<image::Rgb<u8>, _>::from_raw(w as u32, h as u32, buf)
        .expect("buffer size")
        .save(path)
        .map_err(|e| Error::ImageFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Reads an image by extension: `.pgm` or `.png`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("png") => read_png_gray(path),
        _ => Err(Error::ImageFormat {
            path: path.to_path_buf(),
            message: "unsupported extension (expected .pgm or .png)".into(),
        }),
    }
}

/// Writes an image by extension: `.pgm` or `.png`.
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => write_pgm(img, path),
        Some("png") => write_png_gray(img, path),
        _ => Err(Error::ImageFormat {
            path: path.to_path_buf(),
            message: "unsupported extension (expected .pgm or .png)".into(),
        }),
    }
}

/// Reads a mask from a PGM/PNG file: sample value 0 means missing, anything
/// else observed.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let img = read_image(path)?;
    Mask::new(
        img.width(),
        img.height(),
        img.data().iter().map(|&v| (v != 0.0) as u8).collect(),
    )
}

/// Writes a mask as an 8-bit PGM: 0 = missing, 255 = observed.
pub fn write_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let img = Image::from_vec(
        mask.width(),
        mask.height(),
        255.0,
        mask.data().iter().map(|&v| v as f64 * 255.0).collect(),
    )?;
    write_pgm(&img, path)
}

/// Parses a PSF from a whitespace-separated text grid of floats (one row per
/// line) or a PGM file; taps are normalized to sum 1 for PGM sources.
pub fn read_psf(path: impl AsRef<Path>) -> Result<crate::filter::Filter> {
    let path = path.as_ref();
    if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
        let img = read_pgm(path)?;
        if img.width() != img.height() || img.width() % 2 == 0 {
            return Err(Error::RejectedInput(format!(
                "psf must be square and odd-sized, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let sum: f64 = img.data().iter().sum();
        if sum <= 0.0 {
            return Err(Error::RejectedInput("psf has non-positive mass".into()));
        }
        return crate::filter::Filter::new(
            img.width(),
            img.data().iter().map(|&v| v / sum).collect(),
        );
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| format!("bad float '{t}'")))
                .collect::<std::result::Result<Vec<f64>, String>>()
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(|msg| Error::ImageFormat {
            path: path.to_path_buf(),
            message: msg,
        })?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::RejectedInput("psf text grid must be square".into()));
    }
    crate::filter::Filter::new(n, rows.into_iter().flatten().collect())
}

/// Writes a PSF as a text grid.
pub fn write_psf(psf: &crate::filter::Filter, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for i in 0..psf.size() {
        let row: Vec<String> = (0..psf.size())
            .map(|j| format!("{:.17e}", psf.tap(i, j)))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let img = Image::from_fn(7, 5, 255.0, |x, y| ((x * 37 + y * 11) % 256) as f64);
        write_pgm(&img, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_round_trip_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t16.pgm");
        let img = Image::from_fn(4, 4, 65535.0, |x, y| ((x * 9001 + y * 333) % 65536) as f64);
        write_pgm(&img, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn write_rounds_half_up_and_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pgm");
        let img = Image::from_vec(4, 1, 255.0, vec![-3.0, 0.5, 200.49, 300.0]).unwrap();
        write_pgm(&img, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0, 200.0, 255.0]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = Image::from_fn(6, 6, 255.0, |x, y| ((x + 6 * y) * 7 % 256) as f64);
        write_png_gray(&img, &path).unwrap();
        let back = read_png_gray(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_with_comments_parses() {
        let bytes = b"P5\n# a comment\n2 2\n255\n\x01\x02\x03\x04";
        let img = parse_pgm(bytes).unwrap();
        assert_eq!(img.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn psf_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.psf");
        let psf = crate::filter::Filter::new(3, vec![0.0, 0.1, 0.0, 0.1, 0.6, 0.1, 0.0, 0.1, 0.0])
            .unwrap();
        write_psf(&psf, &path).unwrap();
        let back = read_psf(&path).unwrap();
        for (a, b) in psf.taps().iter().zip(back.taps()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
