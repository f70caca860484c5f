//! Pseudo-view bundle: a directory of numbered supervision views that
//! external tools can read or replace.
//!
//! ```text
//! view_000.png        RGB (16-bit on write; 8- or 16-bit on read)
//! view_000.dpth       depth, DPTH format
//! view_000.pose.json  camera, one trajectory entry
//! mask_000.png        synthesized pixels (optional; absent = none)
//! ```
//!
//! Views are numbered from 0 without gaps.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::pseudo::PseudoView;

use super::raster::{read_dpth, read_mask_png, read_rgb_png, write_dpth, write_mask_png, write_rgb_png16};
use super::trajectory::CameraEntry;
use super::{create_dir, read_json, write_atomic};

pub fn view_paths(dir: &Path, i: usize) -> [PathBuf; 4] {
    [
        dir.join(format!("view_{i:03}.png")),
        dir.join(format!("view_{i:03}.dpth")),
        dir.join(format!("view_{i:03}.pose.json")),
        dir.join(format!("mask_{i:03}.png")),
    ]
}

pub fn save_views(dir: &Path, views: &[PseudoView]) -> Result<()> {
    create_dir(dir)?;
    for (i, v) in views.iter().enumerate() {
        v.validate()?;
        let [rgb, depth, pose, mask] = view_paths(dir, i);
        write_rgb_png16(&rgb, &v.rgb)?;
        write_dpth(&depth, &v.depth)?;
        write_mask_png(&mask, &v.inpaint_mask)?;
        let mut json = CameraEntry::from(&v.camera).to_json();
        json.push('\n');
        write_atomic(&pose, json.as_bytes())?;
    }
    Ok(())
}

fn missing(path: &Path) -> Error {
    Error::format(path, "missing from view bundle")
}

/// Load every view of a bundle and validate it (sizes, pose
/// orthonormality, positive depth).
pub fn load_external_views(dir: &Path) -> Result<Vec<PseudoView>> {
    if !dir.is_dir() {
        return Err(Error::format(dir, "view bundle directory does not exist"));
    }
    let mut views = Vec::new();
    loop {
        let [rgb_p, depth_p, pose_p, mask_p] = view_paths(dir, views.len());
        if !rgb_p.exists() {
            // a stray companion file means the colour image is what is missing
            if depth_p.exists() || pose_p.exists() {
                return Err(missing(&rgb_p));
            }
            break;
        }
        for p in [&depth_p, &pose_p] {
            if !p.exists() {
                return Err(missing(p));
            }
        }
        let entry: CameraEntry = read_json(&pose_p)?;
        let camera = entry.camera().map_err(|e| Error::format(&pose_p, e.to_string()))?;
        let rgb = read_rgb_png(&rgb_p)?;
        let depth = read_dpth(&depth_p)?;
        let inpaint_mask = if mask_p.exists() {
            read_mask_png(&mask_p)?
        } else {
            Mask::new(rgb.width(), rgb.height(), false)
        };
        let view = PseudoView {
            camera,
            rgb,
            depth,
            inpaint_mask,
        };
        view.validate().map_err(|e| Error::format(&rgb_p, e.to_string()))?;
        views.push(view);
    }
    if views.is_empty() {
        return Err(missing(&dir.join("view_000.png")));
    }
    Ok(views)
}
