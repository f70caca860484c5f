//! Depth-based forward warping: lift an RGB-D view to points, move them into
//! another camera, and resolve overlaps with a z-buffer (nearest point wins).

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::{backproject, project, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::image::{DepthRaster, Mask, RgbImage};

/// One lifted pixel per entry, in the source camera frame. Point `i` comes
/// from pixel `i` in row-major order.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpSample {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub rgb: [f32; 3],
    /// Row-major index of the source pixel; breaks depth ties.
    pub source: u32,
}

#[derive(Debug, Clone, Default)]
pub struct WarpedSamples {
    pub samples: Vec<WarpSample>,
    /// Points dropped for landing on or behind the target image plane.
    pub culled: usize,
}

/// Point footprint used by [`painter_render`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplatRadius {
    /// Each sample covers the single nearest pixel.
    #[default]
    Point,
    /// Each sample covers the 2x2 block of pixels around it.
    Block2,
}

/// A warped view. Pixels with `hole_mask == true` received no sample; their
/// color and depth are zero and carry no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedView {
    pub rgb: RgbImage,
    pub depth: Vec<f32>,
    pub hole_mask: Mask,
}

impl WarpedView {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }
}

pub fn lift_to_points(rgb: &RgbImage, depth: &DepthRaster, intrinsics: &Intrinsics) -> Result<PointCloud> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    if rgb.width() != w || rgb.height() != h || depth.width() != w || depth.height() != h {
        return Err(Error::Dimension(format!(
            "camera is {}x{} but rgb is {}x{} and depth is {}x{}",
            w,
            h,
            rgb.width(),
            rgb.height(),
            depth.width(),
            depth.height()
        )));
    }
    let mut points = Vec::with_capacity(w * h);
    let mut colors = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            points.push(backproject(intrinsics, x as f64, y as f64, depth.get(x, y) as f64));
            colors.push(rgb.get(x, y));
        }
    }
    Ok(PointCloud { points, colors })
}

/// Move points into the target frame with `relative` and project them.
pub fn warp_points(cloud: &PointCloud, target: &Intrinsics, relative: &Pose) -> WarpedSamples {
    let mut samples = Vec::with_capacity(cloud.len());
    let mut culled = 0;
    for (i, (p, rgb)) in cloud.points.iter().zip(&cloud.colors).enumerate() {
        let proj = project(target, &relative.transform(p));
        if !proj.valid || !proj.x.is_finite() || !proj.y.is_finite() {
            culled += 1;
            continue;
        }
        samples.push(WarpSample {
            x: proj.x,
            y: proj.y,
            depth: proj.depth,
            rgb: *rgb,
            source: i as u32,
        });
    }
    WarpedSamples { samples, culled }
}

#[derive(Clone, Copy)]
struct ZEntry {
    depth: f64,
    source: u32,
    sample: u32,
}

#[inline]
fn nearer(a: &ZEntry, b: &ZEntry) -> bool {
    a.depth < b.depth || (a.depth == b.depth && a.source < b.source)
}

const CHUNK: usize = 1 << 14;

/// Z-buffer render of warped samples. Each sample snaps to the pixel
/// `floor(x + 0.5), floor(y + 0.5)`; the smallest depth wins, ties go to the
/// lowest source index. The result does not depend on the thread count.
pub fn painter_render(samples: &WarpedSamples, width: usize, height: usize, splat: SplatRadius) -> WarpedView {
    assert!(width >= 1 && height >= 1, "target size must be at least 1x1");
    let n = width * height;

    let splat_chunk = |chunk_index: usize, chunk: &[WarpSample]| {
        let mut zbuf: Vec<Option<ZEntry>> = vec![None; n];
        for (j, s) in chunk.iter().enumerate() {
            let entry = ZEntry {
                depth: s.depth,
                source: s.source,
                sample: (chunk_index * CHUNK + j) as u32,
            };
            let (x0, y0, extent) = match splat {
                SplatRadius::Point => ((s.x + 0.5).floor(), (s.y + 0.5).floor(), 1),
                SplatRadius::Block2 => (s.x.floor(), s.y.floor(), 2),
            };
            for dy in 0..extent {
                for dx in 0..extent {
                    let px = x0 + dx as f64;
                    let py = y0 + dy as f64;
                    if px < 0.0 || py < 0.0 || px >= width as f64 || py >= height as f64 {
                        continue;
                    }
                    let idx = py as usize * width + px as usize;
                    match &zbuf[idx] {
                        Some(cur) if !nearer(&entry, cur) => {}
                        _ => zbuf[idx] = Some(entry),
                    }
                }
            }
        }
        zbuf
    };

    let merge = |mut a: Vec<Option<ZEntry>>, b: Vec<Option<ZEntry>>| {
        for (x, y) in a.iter_mut().zip(b) {
            if let Some(e) = y {
                match x {
                    Some(cur) if !nearer(&e, cur) => {}
                    _ => *x = Some(e),
                }
            }
        }
        a
    };

    let zbuf = if samples.samples.len() <= CHUNK {
        splat_chunk(0, &samples.samples)
    } else {
        samples
            .samples
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, c)| splat_chunk(ci, c))
            .reduce(|| vec![None; n], merge)
    };

    let mut rgb = RgbImage::new(width, height);
    let mut depth = vec![0.0f32; n];
    let mut holes = Mask::new(width, height, true);
    for (i, e) in zbuf.iter().enumerate() {
        if let Some(e) = e {
            let s = &samples.samples[e.sample as usize];
            rgb.set(i % width, i / width, s.rgb);
            depth[i] = s.depth as f32;
            holes.as_mut_slice()[i] = false;
        }
    }
    WarpedView {
        rgb,
        depth,
        hole_mask: holes,
    }
}

/// Lift, warp and render in one call.
pub fn forward_warp(
    rgb: &RgbImage,
    depth: &DepthRaster,
    source: &Intrinsics,
    target: &Intrinsics,
    relative: &Pose,
    splat: SplatRadius,
) -> Result<WarpedView> {
    let cloud = lift_to_points(rgb, depth, source)?;
    let samples = warp_points(&cloud, target, relative);
    Ok(painter_render(&samples, target.width, target.height, splat))
}
