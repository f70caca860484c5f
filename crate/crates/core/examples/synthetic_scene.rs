//! Build the procedural ground-truth scene and write its views to disk.
//!
//! `cargo run --example synthetic_scene -- [out_dir]`

use std::path::PathBuf;

use expanded_mpi::io::raster::{write_dpth, write_rgb_png};
use expanded_mpi::io::trajectory::write_trajectory;
use expanded_mpi::synthetic::{synthetic_scene, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("empi_scene"), PathBuf::from);
    std::fs::create_dir_all(&out)?;
    let scene = synthetic_scene(&SceneConfig::small())?;
    let m = &scene.mpi;
    println!(
        "{} planes of {}x{} at depths {:?}",
        m.planes(),
        m.width(),
        m.height(),
        m.plane_depths().iter().map(|d| format!("{d:.2}")).collect::<Vec<_>>()
    );
    for (i, v) in scene.views.iter().enumerate() {
        write_rgb_png(&out.join(format!("view_{i:02}.png")), &v.rgb)?;
        write_dpth(&out.join(format!("view_{i:02}.dpth")), &v.depth)?;
        let (lo, hi) = v.depth.range();
        println!("view {i:2}: centre {:.3?}, depth [{lo:.2}, {hi:.2}]", v.camera.pose.center().as_slice());
    }
    let cams: Vec<_> = scene.views.iter().map(|v| v.camera).collect();
    write_trajectory(&out.join("trajectory.json"), &cams)?;
    println!("wrote {}", out.display());
    Ok(())
}
