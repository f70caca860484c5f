//! Web bundle: `manifest.json` plus one RGBA8 PNG per plane, near to far.
//!
//! Colour is straight (not premultiplied). Alpha is the per-plane opacity
//! `1 - exp(-sigma * delta_k)` rounded to 8 bits, so compositing the planes
//! back to front with the ordinary over operator reproduces the volume
//! rendering of the stack up to quantization. The inverse mapping
//! `sigma = -ln(1 - alpha) / delta_k` recovers density except where alpha
//! saturates at 255.

use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpi::volume::CHANNELS;
use crate::mpi::MpiVolume;

use super::raster::quantize8;
use super::{create_dir, read_bytes, read_json, write_atomic, write_json};

pub const MANIFEST: &str = "manifest.json";

/// Intrinsics are those of the expanded plane grid, whose principal point
/// is shifted by the centered source window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebManifest {
    pub planes: usize,
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Plane-size expansion factor `a`.
    pub expansion: f64,
    /// Mean inter-plane spacing.
    pub delta: f64,
    /// Per-plane spacing used for the alpha conversion.
    pub deltas: Vec<f64>,
    pub source_width: usize,
    pub source_height: usize,
    pub alpha: String,
}

pub fn plane_file(k: usize) -> String {
    format!("plane_{k:04}.png")
}

/// Straight-alpha RGBA8 bytes of plane `k`.
pub fn plane_rgba(mpi: &MpiVolume, k: usize, delta: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(mpi.plane_len() * 4);
    for t in mpi.plane(k).chunks_exact(CHANNELS) {
        let a = -(-(t[3] as f64) * delta).exp_m1();
        out.extend_from_slice(&[quantize8(t[0]), quantize8(t[1]), quantize8(t[2]), quantize8(a as f32)]);
    }
    out
}

pub fn export_web(mpi: &MpiVolume, dir: &Path) -> Result<WebManifest> {
    create_dir(dir)?;
    let k = mpi.plane_intrinsics();
    let src = &mpi.reference().intrinsics;
    let deltas = mpi.deltas();
    let manifest = WebManifest {
        planes: mpi.planes(),
        width: mpi.width(),
        height: mpi.height(),
        depths: mpi.plane_depths().to_vec(),
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        expansion: mpi.expansion().a,
        delta: mpi.delta(),
        deltas: deltas.clone(),
        source_width: src.width,
        source_height: src.height,
        alpha: "straight; alpha = 1 - exp(-sigma * deltas[k])".into(),
    };
    for (p, &delta) in deltas.iter().enumerate() {
        let path = dir.join(plane_file(p));
        let mut png = Vec::new();
        PngEncoder::new(&mut png)
            .write_image(&plane_rgba(mpi, p, delta), mpi.width() as u32, mpi.height() as u32, ExtendedColorType::Rgba8)
            .map_err(|e| Error::Image {
                path: path.clone(),
                source: e,
            })?;
        write_atomic(&path, &png)?;
    }
    // manifest last: its presence marks a complete bundle
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// A loaded bundle: manifest plus RGBA8 planes, near to far.
#[derive(Debug, Clone)]
pub struct WebBundle {
    pub manifest: WebManifest,
    pub planes: Vec<Vec<u8>>,
}

impl WebBundle {
    /// Over-composite back to front; returns straight RGB in `[0, 1]`.
    pub fn composite(&self) -> Vec<f64> {
        let n = self.manifest.width * self.manifest.height;
        let mut out = vec![0.0; n * 3];
        for plane in self.planes.iter().rev() {
            for (o, px) in out.chunks_exact_mut(3).zip(plane.chunks_exact(4)) {
                let a = px[3] as f64 / 255.0;
                for c in 0..3 {
                    o[c] = px[c] as f64 / 255.0 * a + o[c] * (1.0 - a);
                }
            }
        }
        out
    }
}

/// Load and validate a bundle: the manifest plane count must equal the
/// number of plane files and every plane must have the manifest size.
pub fn read_web_bundle(dir: &Path) -> Result<WebBundle> {
    let manifest: WebManifest = read_json(&dir.join(MANIFEST))?;
    let on_disk = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| {
            let n = e.file_name();
            let n = n.to_string_lossy();
            n.starts_with("plane_") && n.ends_with(".png")
        })
        .count();
    if on_disk != manifest.planes || manifest.depths.len() != manifest.planes {
        return Err(Error::format(
            dir.join(MANIFEST),
            format!(
                "manifest declares {} planes ({} depths) but {on_disk} plane files exist",
                manifest.planes,
                manifest.depths.len()
            ),
        ));
    }
    let mut planes = Vec::with_capacity(manifest.planes);
    for k in 0..manifest.planes {
        let path: PathBuf = dir.join(plane_file(k));
        let img = image::load_from_memory(&read_bytes(&path)?).map_err(|e| Error::Image {
            path: path.clone(),
            source: e,
        })?;
        if (img.width() as usize, img.height() as usize) != (manifest.width, manifest.height) {
            return Err(Error::format(
                path,
                format!("plane is {}x{}, manifest says {}x{}", img.width(), img.height(), manifest.width, manifest.height),
            ));
        }
        planes.push(img.to_rgba8().into_raw());
    }
    Ok(WebBundle { manifest, planes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraModel, ExpansionSpec, Intrinsics};
    use crate::mpi::{composite, PlaneSpacing};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn volume(planes: usize, spacing: PlaneSpacing) -> MpiVolume {
        let k = Intrinsics::centered(12, 10, 1.0).unwrap();
        MpiVolume::new(CameraModel::at_origin(k), planes, ExpansionSpec::from_factor(&k, 1.25).unwrap(), (1.0, 8.0), spacing)
            .unwrap()
    }

    #[test]
    fn alpha_endpoints() {
        let mut mpi = volume(3, PlaneSpacing::Depth);
        let delta = mpi.delta();
        for t in mpi.texels.chunks_exact_mut(CHANNELS) {
            t[3] = (20.0 / delta) as f32;
        }
        let n = mpi.plane_len() * CHANNELS;
        for t in mpi.texels[..n].chunks_exact_mut(CHANNELS) {
            t[3] = 0.0;
        }
        let zero = plane_rgba(&mpi, 0, delta);
        assert!(zero.chunks_exact(4).all(|p| p[3] == 0));
        let full = plane_rgba(&mpi, 1, delta);
        assert!(full.chunks_exact(4).all(|p| p[3] == 255));
    }

    #[test]
    fn over_compositing_matches_volume_rendering() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (planes, spacing) in [(2, PlaneSpacing::Depth), (8, PlaneSpacing::Disparity), (32, PlaneSpacing::Depth), (64, PlaneSpacing::Disparity)] {
            let mut mpi = volume(planes, spacing);
            let deltas = mpi.deltas();
            let stride = mpi.plane_len() * CHANNELS;
            for (k, plane) in mpi.texels.chunks_exact_mut(stride).enumerate() {
                for t in plane.chunks_exact_mut(CHANNELS) {
                    let sd: f64 = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..3.0) };
                    t.copy_from_slice(&[rng.gen(), rng.gen(), rng.gen(), (sd / deltas[k]) as f32]);
                }
            }
            let dir = tempfile::tempdir().unwrap();
            let m = export_web(&mpi, dir.path()).unwrap();
            assert_eq!(m.planes, planes);
            let bundle = read_web_bundle(dir.path()).unwrap();
            let over = bundle.composite();
            let texels: Vec<f64> = mpi.texels.iter().map(|&v| v as f64).collect();
            let (exact, _) = composite(&texels, mpi.plane_len(), &deltas);
            let worst = over.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst <= 2.0 / 255.0, "P={planes}: {worst}");
        }
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        export_web(&volume(3, PlaneSpacing::Depth), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(plane_file(2))).unwrap();
        let msg = read_web_bundle(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("3 planes"), "{msg}");
    }
}
