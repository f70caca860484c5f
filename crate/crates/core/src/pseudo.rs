//! Pseudo multi-view supervision: depth alignment after canvas expansion,
//! background-first hole filling, and the warp + inpaint loop over a set of
//! camera poses.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::camera::{CameraModel, Pose};
use crate::error::{Error, Result};
use crate::image::{DepthRaster, Mask, RgbImage};
use crate::warp::{forward_warp, SplatRadius, WarpedView};

/// A posed supervision image. Every pixel is either warped from the source
/// view or synthesized (`inpaint_mask == true`).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoView {
    pub camera: CameraModel,
    pub rgb: RgbImage,
    pub depth: DepthRaster,
    pub inpaint_mask: Mask,
}

impl PseudoView {
    pub fn pose(&self) -> &Pose {
        &self.camera.pose
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.intrinsics.validate()?;
        self.camera.pose.validate()?;
        let (w, h) = (self.camera.width(), self.camera.height());
        let dims = [
            (self.rgb.width(), self.rgb.height()),
            (self.depth.width(), self.depth.height()),
            (self.inpaint_mask.width(), self.inpaint_mask.height()),
        ];
        if dims.iter().any(|&d| d != (w, h)) {
            return Err(Error::Dimension(format!(
                "camera is {w}x{h}; rgb/depth/mask are {:?}",
                dims
            )));
        }
        Ok(())
    }
}

/// Affine depth correction `aligned = scale * depth + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthAlignment {
    pub scale: f64,
    pub shift: f64,
}

impl DepthAlignment {
    #[inline]
    pub fn apply(&self, d: f64) -> f64 {
        self.scale * d + self.shift
    }
}

#[derive(Debug, Clone)]
pub struct AlignedDepth {
    pub alignment: DepthAlignment,
    pub depth: DepthRaster,
    /// Root mean square residual over the original region after alignment.
    pub rms: f64,
}

/// Least-squares scale and shift taking `reestimated` onto `reference`
/// inside `original_region`, applied to the whole `reestimated` canvas.
///
/// Both rasters share the expanded canvas; `reference` is only read inside
/// the mask.
pub fn align_depth(reference: &DepthRaster, reestimated: &DepthRaster, original_region: &Mask) -> Result<AlignedDepth> {
    let (w, h) = (reestimated.width(), reestimated.height());
    if reference.width() != w || reference.height() != h || original_region.width() != w || original_region.height() != h {
        return Err(Error::Dimension(format!(
            "reference {}x{}, re-estimated {}x{}, mask {}x{}",
            reference.width(),
            reference.height(),
            w,
            h,
            original_region.width(),
            original_region.height()
        )));
    }
    let pairs: Vec<(f64, f64)> = original_region
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (reestimated.as_slice()[i] as f64, reference.as_slice()[i] as f64))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Degenerate("original-region mask is empty".into()));
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in &pairs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let spread = pairs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    if spread.0 == spread.1 || sxx <= 0.0 {
        return Err(Error::Degenerate(format!(
            "re-estimated depth is constant ({}) over the original region",
            spread.0
        )));
    }
    let scale = sxy / sxx;
    let shift = mean_y - scale * mean_x;
    if !(scale > 0.0) {
        return Err(Error::Degenerate(format!(
            "fitted scale {scale} is not positive (shift {shift}, {} samples, mean re-estimated {mean_x}, mean reference {mean_y})",
            pairs.len()
        )));
    }
    let alignment = DepthAlignment { scale, shift };
    let rms = (pairs
        .iter()
        .map(|&(x, y)| (alignment.apply(x) - y).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let data = reestimated
        .as_slice()
        .iter()
        .map(|&d| alignment.apply(d as f64) as f32)
        .collect();
    let depth = DepthRaster::new(w, h, data)?;
    Ok(AlignedDepth { alignment, depth, rms })
}

const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Depth with a total order for the fill queue.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f32);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Fill the holes of a warped view from the background inward.
///
/// Holes are filled one at a time, best-first: the next hole is the one
/// whose farthest known 8-neighbor is deepest (ties: first queued), and it
/// copies that neighbor's color and depth, preferring warped over
/// synthesized neighbors at equal depth. A 3x3 box blur restricted to filled pixels then
/// softens the synthesized colors. Known pixels are never modified.
pub fn inpaint_depth_aware(view: &WarpedView, camera: CameraModel) -> Result<PseudoView> {
    let (w, h) = (view.width(), view.height());
    if camera.width() != w || camera.height() != h {
        return Err(Error::Dimension(format!(
            "camera is {}x{} but the view is {w}x{h}",
            camera.width(),
            camera.height()
        )));
    }
    if view.hole_mask.all() {
        return Err(Error::Degenerate("warped view is entirely holes".into()));
    }
    let mut rgb = view.rgb.clone();
    let mut depth = view.depth.clone();
    let mut known: Vec<bool> = view.hole_mask.as_slice().iter().map(|h| !h).collect();
    let filled = view.hole_mask.clone();

    let holes = view.hole_mask.as_slice();
    // Best-first: the hole whose farthest known neighbor is deepest is
    // filled next, so background spreads before foreground.
    let best_neighbor = |i: usize, known: &[bool], depth: &[f32]| -> Option<usize> {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        let mut best: Option<usize> = None;
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            // equal depth: warped pixels beat already synthesized ones
            if known[j]
                && best.map_or(true, |b| {
                    depth[j] > depth[b] || (depth[j] == depth[b] && !holes[j] && holes[b])
                })
            {
                best = Some(j);
            }
        }
        best
    };
    // Equal depths pop in push order, so fronts advance as wavefronts.
    let mut heap = BinaryHeap::new();
    let mut order = 0usize;
    for i in (0..w * h).filter(|&i| !known[i]) {
        if let Some(j) = best_neighbor(i, &known, &depth) {
            heap.push((Key(depth[j]), Reverse(order), i));
            order += 1;
        }
    }
    while let Some((_, _, i)) = heap.pop() {
        if known[i] {
            continue;
        }
        let j = best_neighbor(i, &known, &depth).expect("queued holes touch a known pixel");
        let c = rgb.pixel(j);
        rgb.set(i % w, i / w, c);
        depth[i] = depth[j];
        known[i] = true;
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let n = ny as usize * w + nx as usize;
            if !known[n] {
                heap.push((Key(depth[i]), Reverse(order), n));
                order += 1;
            }
        }
    }
    if known.iter().any(|k| !k) {
        return Err(Error::Degenerate("hole region is disconnected from known pixels".into()));
    }

    if filled.any() {
        let src = rgb.clone();
        for i in (0..w * h).filter(|&i| filled.as_slice()[i]) {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let mut acc = [0.0f64; 3];
            let mut count = 0usize;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if filled.as_slice()[j] {
                        let c = src.pixel(j);
                        for k in 0..3 {
                            acc[k] += c[k] as f64;
                        }
                        count += 1;
                    }
                }
            }
            let n = count as f64;
            rgb.set(x as usize, y as usize, [(acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32]);
        }
    }

    Ok(PseudoView {
        camera,
        rgb,
        depth: DepthRaster::new(w, h, depth)?,
        inpaint_mask: filled,
    })
}

/// Warp the reference RGB-D view into every pose and fill the holes.
///
/// Views are rendered with the reference intrinsics. A pose equal to the
/// reference pose reproduces the input exactly.
pub fn build_pseudo_views(
    rgb: &RgbImage,
    depth: &DepthRaster,
    reference: &CameraModel,
    poses: &[Pose],
    splat: SplatRadius,
) -> Result<Vec<PseudoView>> {
    if poses.is_empty() {
        return Err(Error::Domain("no poses to build pseudo views for".into()));
    }
    poses
        .par_iter()
        .map(|pose| {
            let camera = reference.with_pose(*pose);
            camera.pose.validate()?;
            let relative = pose.relative_to(&reference.pose);
            let warped = forward_warp(rgb, depth, &reference.intrinsics, &reference.intrinsics, &relative, splat)?;
            inpaint_depth_aware(&warped, camera)
        })
        .collect()
}

pub use crate::io::bundle::{load_external_views, save_views};
