//! Warp a source RGB-D view into jittered cameras, fill disocclusions and
//! write the result as a view bundle that `empi optimize` can read.
//!
//! `cargo run --example pseudo_views -- [out_dir]`

use std::path::PathBuf;

use expanded_mpi::camera::{sample_poses, yaw_pitch, Pose, PoseRanges};
use expanded_mpi::pseudo::{build_pseudo_views, load_external_views, save_views};
use expanded_mpi::synthetic::{synthetic_scene, SceneConfig};
use expanded_mpi::warp::{forward_warp, SplatRadius};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("empi_views"), PathBuf::from);
    let scene = synthetic_scene(&SceneConfig { views: 1, ..SceneConfig::small() })?;
    let src = &scene.views[0];
    let k = src.camera.intrinsics;

    let ranges = PoseRanges {
        max_translation: [0.15, 0.1, 0.1],
        max_yaw: 6f64.to_radians(),
        max_pitch: 3f64.to_radians(),
    };
    let poses = sample_poses(&Pose::identity(), &ranges, 8, 3);
    for (i, p) in poses.iter().enumerate() {
        let warped = forward_warp(&src.rgb, &src.depth, &k, &k, p, SplatRadius::Point)?;
        let (yaw, pitch) = yaw_pitch(&p.rotation);
        println!(
            "pose {i}: yaw {:5.2} pitch {:5.2} deg, {:4} holes after warping",
            yaw.to_degrees(),
            pitch.to_degrees(),
            warped.hole_mask.count()
        );
    }

    let views = build_pseudo_views(&src.rgb, &src.depth, &src.camera, &poses, SplatRadius::Point)?;
    save_views(&out, &views)?;
    let back = load_external_views(&out)?;
    let filled: usize = back.iter().map(|v| v.inpaint_mask.count()).sum();
    println!("{} views in {}, {filled} pixels synthesized in total", back.len(), out.display());
    Ok(())
}
