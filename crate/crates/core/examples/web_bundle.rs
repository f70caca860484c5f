//! Export an MPI as RGBA plane images plus a manifest, read it back and
//! compare over-compositing with volume rendering.
//!
//! `cargo run --example web_bundle -- [out_dir]`

use std::path::PathBuf;

use expanded_mpi::io::web::{export_web, read_web_bundle};
use expanded_mpi::mpi::composite;
use expanded_mpi::synthetic::{synthetic_scene, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("empi_web"), PathBuf::from);
    let scene = synthetic_scene(&SceneConfig { views: 1, ..SceneConfig::small() })?;
    let m = export_web(&scene.mpi, &out)?;
    println!("{} planes of {}x{} in {}", m.planes, m.width, m.height, out.display());

    let bundle = read_web_bundle(&out)?;
    let over = bundle.composite();
    let texels: Vec<f64> = scene.mpi.texels.iter().map(|&v| v as f64).collect();
    let (exact, _) = composite(&texels, scene.mpi.plane_len(), &scene.mpi.deltas());
    let worst = over.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("over-compositing vs volume rendering: max difference {:.2}/255", worst * 255.0);
    Ok(())
}
