//! Binary PPM (P6, maxval 255) images.

use std::fs;
use std::path::Path;

use spatialgeo_core::encoders::{resize_to_square, ImageGrid};

use crate::error::{Error, Result};

pub fn encode_ppm(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// Header tokens are whitespace separated; `#` starts a comment line.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<ImageGrid, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(format!("expected P6 magic, found {:?}", fields[0]));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} {s:?}"));
    let (w, h, max) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if max == 0 || max > 255 {
        return Err(format!("maxval {max} unsupported (1..=255)"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h * 3;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != need {
        return Err(format!("raster has {} bytes, expected {}", raster.len(), need));
    }
    let data = raster.iter().map(|b| f64::from(*b) / max as f64).collect();
    ImageGrid::new(h, w, data).map_err(|e| e.to_string())
}

pub fn read_ppm(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|m| Error::format(path, m))
}

pub fn write_ppm(path: &Path, img: &ImageGrid) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// Loads a file image and brings it to the encoder resolution.
pub fn load_square(path: &Path, side: usize) -> Result<ImageGrid> {
    let img = read_ppm(path)?;
    if img.height() == side && img.width() == side {
        return Ok(img);
    }
    Ok(resize_to_square(&img, side)?)
}
