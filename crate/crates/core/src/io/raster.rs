//! RGB, mask and depth rasters.
//!
//! Depth is stored either as `DPTH` (exact `f32`) or as a 16-bit grayscale
//! PNG with a `<stem>.json` sidecar `{"d_min": .., "d_max": ..}`:
//!
//! ```text
//! DPTH: "DPTH" | u32 version = 1 | u32 width | u32 height | f32 x (w*h)
//! PNG16: depth = d_min + v / 65535 * (d_max - d_min)
//! ```
//!
//! All integers and floats are little-endian, rows top to bottom.

use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthRaster, Mask, RgbImage};

use super::{read_bytes, read_json, write_atomic, write_json};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
pub const DEPTH_VERSION: u32 = 1;
const DEPTH_HEADER: usize = 16;

fn encode_png(path: &Path, data: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    PngEncoder::new(&mut buf)
        .write_image(data, w as u32, h as u32, color)
        .map_err(|e| Error::Image {
            path: path.into(),
            source: e,
        })?;
    Ok(buf)
}

fn decode_png(path: &Path) -> Result<DynamicImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

#[inline]
pub(crate) fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB PNG; values are clamped to `[0, 1]` and rounded.
pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let data: Vec<u8> = img.as_slice().iter().map(|&v| quantize8(v)).collect();
    write_atomic(path, &encode_png(path, &data, img.width(), img.height(), ExtendedColorType::Rgb8)?)
}

/// 16-bit RGB PNG. Every 8-bit value `k / 255` is exactly representable
/// as `257 k / 65535`, so 8-bit content survives without loss.
pub fn write_rgb_png16(path: &Path, img: &RgbImage) -> Result<()> {
    let mut data = Vec::with_capacity(img.as_slice().len() * 2);
    for &v in img.as_slice() {
        let q = (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16;
        data.extend_from_slice(&q.to_ne_bytes());
    }
    write_atomic(path, &encode_png(path, &data, img.width(), img.height(), ExtendedColorType::Rgb16)?)
}

/// Read any PNG as RGB in `[0, 1]`; 16-bit files keep their precision.
pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = decode_png(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match &img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        _ => img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
    };
    RgbImage::from_vec(w, h, data)
}

/// 8-bit grayscale PNG, 255 where the mask is set.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let data: Vec<u8> = mask.as_slice().iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_atomic(path, &encode_png(path, &data, mask.width(), mask.height(), ExtendedColorType::L8)?)
}

/// Grayscale PNG; pixels at or above half intensity are set.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = decode_png(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Mask::from_vec(w, h, img.into_raw().into_iter().map(|v| v >= 128).collect())
}

pub fn encode_dpth(depth: &DepthRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(DEPTH_HEADER + 4 * depth.as_slice().len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&DEPTH_VERSION.to_le_bytes());
    out.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    out.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    for v in depth.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        offset,
        message: message.into(),
    }
}

pub(crate) fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub(crate) fn le_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Decode a `DPTH` buffer; `path` is only used in error messages.
pub fn decode_dpth(path: &Path, bytes: &[u8]) -> Result<DepthRaster> {
    if bytes.len() < DEPTH_HEADER {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("truncated header: expected {DEPTH_HEADER} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..4] != DEPTH_MAGIC {
        return Err(parse_err(path, 0, format!("bad magic {:?}, expected \"DPTH\"", &bytes[..4])));
    }
    let version = le_u32(bytes, 4);
    if version != DEPTH_VERSION {
        return Err(parse_err(path, 4, format!("unsupported version {version}, expected {DEPTH_VERSION}")));
    }
    let (w, h) = (le_u32(bytes, 8) as usize, le_u32(bytes, 12) as usize);
    if w == 0 || h == 0 {
        return Err(parse_err(path, 8, format!("empty raster {w}x{h}")));
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(DEPTH_HEADER))
        .ok_or_else(|| parse_err(path, 8, format!("raster size {w}x{h} overflows")))?;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            bytes.len().min(expected),
            format!("expected {expected} bytes for {w}x{h}, found {}", bytes.len()),
        ));
    }
    let data: Vec<f32> = (0..w * h).map(|i| le_f32(bytes, DEPTH_HEADER + 4 * i)).collect();
    if let Some(i) = data.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(parse_err(
            path,
            DEPTH_HEADER + 4 * i,
            format!("depth {} at pixel ({}, {}) is not positive and finite", data[i], i % w, i / w),
        ));
    }
    DepthRaster::new(w, h, data)
}

pub fn write_dpth(path: &Path, depth: &DepthRaster) -> Result<()> {
    write_atomic(path, &encode_dpth(depth))
}

pub fn read_dpth(path: &Path) -> Result<DepthRaster> {
    decode_dpth(path, &read_bytes(path)?)
}

/// Value range of a 16-bit depth PNG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub d_min: f64,
    pub d_max: f64,
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// 16-bit PNG plus sidecar; the range is the raster's own min and max.
pub fn write_depth_png16(path: &Path, depth: &DepthRaster) -> Result<DepthRange> {
    let (lo, hi) = depth.range();
    let range = DepthRange {
        d_min: lo as f64,
        d_max: hi as f64,
    };
    let span = range.d_max - range.d_min;
    let mut data = Vec::with_capacity(depth.as_slice().len() * 2);
    for &d in depth.as_slice() {
        let v = if span > 0.0 {
            ((d as f64 - range.d_min) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        data.extend_from_slice(&v.to_ne_bytes());
    }
    let png = encode_png(path, &data, depth.width(), depth.height(), ExtendedColorType::L16)?;
    write_json(&sidecar_path(path), &range)?;
    write_atomic(path, &png)?;
    Ok(range)
}

pub fn read_depth_png16(path: &Path) -> Result<DepthRaster> {
    let range: DepthRange = read_json(&sidecar_path(path))?;
    if !(range.d_min > 0.0 && range.d_max >= range.d_min && range.d_max.is_finite()) {
        return Err(Error::format(
            sidecar_path(path),
            format!("invalid depth range [{}, {}]", range.d_min, range.d_max),
        ));
    }
    let img = decode_png(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let span = range.d_max - range.d_min;
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| (range.d_min + v as f64 / 65535.0 * span) as f32)
        .collect();
    DepthRaster::new(w, h, data)
}

/// Read depth by extension: `.png` uses the 16-bit path, anything else is
/// parsed as `DPTH`.
pub fn read_depth(path: &Path) -> Result<DepthRaster> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => read_depth_png16(path),
        _ => read_dpth(path),
    }
}
