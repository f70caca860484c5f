//! Binary MPI container.
//!
//! ```text
//! "EMPI" | u32 version = 1 | u32 P | u32 H | u32 W
//! f32 fx | f32 fy | f32 cx | f32 cy | u32 src_width | u32 src_height
//! f32 expansion_a | f32 d_near | f32 d_far | f32 x P plane depths
//! f32 x (P*H*W*4) texels, plane-major, row-major, (r, g, b, sigma)
//! optional: "FRZM" | ceil(P*H*W / 8) bytes, bit i at byte i/8, MSB first
//! ```
//!
//! Little-endian throughout. The reference pose is not stored; volumes
//! reload in their own camera frame (identity pose). Plane spacing is
//! recovered by matching the stored depths against both spacing rules.

use std::path::{Path, PathBuf};

use crate::camera::{CameraModel, Intrinsics};
use crate::error::{Error, Result};
use crate::mpi::filter::BilateralKernel;
use crate::mpi::volume::{plane_depths, CHANNELS};
use crate::mpi::{FreezeMask, MpiVolume, PlaneSpacing};

use super::raster::{le_f32, le_u32};
use super::{read_bytes, read_json, write_atomic, write_json};

pub const MPI_MAGIC: &[u8; 4] = b"EMPI";
pub const MPI_VERSION: u32 = 1;
pub const FREEZE_MAGIC: &[u8; 4] = b"FRZM";
const HEADER: usize = 4 + 4 * 13;

pub fn encode_mpi(mpi: &MpiVolume, freeze: Option<&FreezeMask>) -> Result<Vec<u8>> {
    if let Some(f) = freeze {
        if !f.matches(mpi) {
            return Err(Error::Dimension("freeze mask does not match the volume".into()));
        }
    }
    let k = &mpi.reference().intrinsics;
    let (near, far) = mpi.depth_range();
    let mut out = Vec::with_capacity(HEADER + 4 * (mpi.planes() + mpi.texels.len()) + 4 + mpi.texels.len() / 32 + 1);
    out.extend_from_slice(MPI_MAGIC);
    let u32s = [MPI_VERSION, mpi.planes() as u32, mpi.height() as u32, mpi.width() as u32];
    for v in u32s {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [k.fx, k.fy, k.cx, k.cy] {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(k.width as u32).to_le_bytes());
    out.extend_from_slice(&(k.height as u32).to_le_bytes());
    for v in [mpi.expansion().a as f32, near, far] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &d in mpi.plane_depths() {
        out.extend_from_slice(&(d as f32).to_le_bytes());
    }
    for v in &mpi.texels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(f) = freeze {
        out.extend_from_slice(FREEZE_MAGIC);
        let bits = f.as_slice();
        let mut packed = vec![0u8; bits.len().div_ceil(8)];
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            packed[i / 8] |= 0x80 >> (i % 8);
        }
        out.extend_from_slice(&packed);
    }
    Ok(out)
}

/// Decode a container; the freeze mask is all-false when the chunk is
/// absent.
pub fn decode_mpi(path: &Path, bytes: &[u8]) -> Result<(MpiVolume, FreezeMask)> {
    let err = |offset: usize, message: String| Error::Parse {
        path: path.into(),
        offset,
        message,
    };
    if bytes.len() < 8 {
        return Err(err(bytes.len(), format!("truncated header: expected {HEADER} bytes, found {}", bytes.len())));
    }
    if &bytes[..4] != MPI_MAGIC {
        return Err(err(0, format!("bad magic {:?}, expected \"EMPI\"", &bytes[..4])));
    }
    let version = le_u32(bytes, 4);
    if version != MPI_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MPI_VERSION,
        });
    }
    if bytes.len() < HEADER {
        return Err(err(bytes.len(), format!("truncated header: expected {HEADER} bytes, found {}", bytes.len())));
    }
    let (p, h, w) = (le_u32(bytes, 8) as usize, le_u32(bytes, 12) as usize, le_u32(bytes, 16) as usize);
    let [fx, fy, cx, cy] = [20, 24, 28, 32].map(|o| le_f32(bytes, o));
    let (src_w, src_h) = (le_u32(bytes, 36) as usize, le_u32(bytes, 40) as usize);
    let [a, near, far] = [44, 48, 52].map(|o| le_f32(bytes, o));

    let texel_count = p
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| err(8, format!("volume size {p}x{h}x{w} overflows")))?;
    let depths_at = HEADER;
    let texels_at = depths_at + 4 * p;
    let body_end = texel_count
        .checked_mul(4 * CHANNELS)
        .and_then(|n| n.checked_add(texels_at))
        .ok_or_else(|| err(8, format!("volume size {p}x{h}x{w} overflows")))?;
    let packed_len = texel_count.div_ceil(8);
    let with_freeze = body_end + 4 + packed_len;
    if bytes.len() != body_end && bytes.len() != with_freeze {
        return Err(err(
            bytes.len().min(body_end),
            format!(
                "expected {body_end} bytes (or {with_freeze} with a freeze chunk) for {p}x{h}x{w}, found {}",
                bytes.len()
            ),
        ));
    }

    let stored: Vec<f32> = (0..p).map(|i| le_f32(bytes, depths_at + 4 * i)).collect();
    if let Some(i) = (1..p).find(|&i| !(stored[i] > stored[i - 1])) {
        return Err(err(depths_at + 4 * i, "plane depths are not strictly increasing".into()));
    }
    let spacing = [PlaneSpacing::Depth, PlaneSpacing::Disparity]
        .into_iter()
        .find(|&s| {
            p >= 2
                && plane_depths(near as f64, far as f64, p, s)
                    .iter()
                    .zip(&stored)
                    .all(|(&d, &s)| d as f32 == s)
        })
        .ok_or_else(|| err(depths_at, "plane depths match neither depth nor disparity spacing".into()))?;

    let k = Intrinsics::new(fx as f64, fy as f64, cx as f64, cy as f64, src_w, src_h).map_err(|e| err(20, e.to_string()))?;
    let texels: Vec<f32> = (0..texel_count * CHANNELS).map(|i| le_f32(bytes, texels_at + 4 * i)).collect();
    let mpi = MpiVolume::from_parts(CameraModel::at_origin(k), p, w, h, a, (near, far), spacing, texels)
        .map_err(|e| err(8, e.to_string()))?;

    let freeze = if bytes.len() == with_freeze {
        if &bytes[body_end..body_end + 4] != FREEZE_MAGIC {
            return Err(err(body_end, "unknown trailing chunk, expected \"FRZM\"".into()));
        }
        let packed = &bytes[body_end + 4..];
        let bits = (0..texel_count).map(|i| packed[i / 8] & (0x80 >> (i % 8)) != 0).collect();
        FreezeMask::from_bits(p, w, h, bits)?
    } else {
        FreezeMask::for_volume(&mpi)
    };
    Ok((mpi, freeze))
}

pub fn save_mpi(path: &Path, mpi: &MpiVolume, freeze: Option<&FreezeMask>) -> Result<()> {
    write_atomic(path, &encode_mpi(mpi, freeze)?)
}

pub fn load_mpi(path: &Path) -> Result<(MpiVolume, FreezeMask)> {
    decode_mpi(path, &read_bytes(path)?)
}

/// `<container>.filter.json`, where the learned kernel is kept.
pub fn kernel_path(mpi_path: &Path) -> PathBuf {
    let mut s = mpi_path.as_os_str().to_owned();
    s.push(".filter.json");
    PathBuf::from(s)
}

pub fn save_kernel(mpi_path: &Path, kernel: &BilateralKernel) -> Result<()> {
    write_json(&kernel_path(mpi_path), kernel)
}

/// The stored kernel, or `None` when no sidecar exists.
pub fn load_kernel(mpi_path: &Path) -> Result<Option<BilateralKernel>> {
    let p = kernel_path(mpi_path);
    if !p.exists() {
        return Ok(None);
    }
    let k: BilateralKernel = read_json(&p)?;
    k.validate()?;
    Ok(Some(k))
}
