//! Write and reread every on-disk format: DPTH depth, 16-bit PNG depth,
//! the MPI container with its freeze mask, and a camera trajectory.
//!
//! `cargo run --example file_formats`

use expanded_mpi::camera::{sample_poses, CameraModel, ExpansionSpec, Intrinsics, Pose, PoseRanges};
use expanded_mpi::image::{DepthRaster, RgbImage};
use expanded_mpi::io::container::{load_mpi, save_mpi};
use expanded_mpi::io::raster::{read_depth, read_dpth, write_depth_png16, write_dpth};
use expanded_mpi::io::trajectory::{read_trajectory, write_trajectory};
use expanded_mpi::mpi::{init_mpi, PlaneSpacing};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let (w, h) = (40, 30);
    let depth = DepthRaster::from_fn(w, h, |x, y| 1.5 + 0.1 * x as f32 + 0.01 * (y * y) as f32)?;

    let p = dir.path().join("d.dpth");
    write_dpth(&p, &depth)?;
    println!("DPTH {} bytes, identical on reload: {}", std::fs::metadata(&p)?.len(), read_dpth(&p)? == depth);

    let p = dir.path().join("d.png");
    let range = write_depth_png16(&p, &depth)?;
    let back = read_depth(&p)?;
    let err = back.as_slice().iter().zip(depth.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    println!(
        "PNG16 depth over [{:.3}, {:.3}]: max error {err:.2e} (bound {:.2e})",
        range.d_min,
        range.d_max,
        (range.d_max - range.d_min) / 65535.0
    );

    let k = Intrinsics::centered(w, h, 1.0)?;
    let rgb = RgbImage::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.25]);
    let init = init_mpi(
        &rgb,
        &depth,
        &CameraModel::at_origin(k),
        12,
        ExpansionSpec::from_factor(&k, 1.5)?,
        depth.range(),
        PlaneSpacing::Disparity,
    )?;
    let p = dir.path().join("v.empi");
    save_mpi(&p, &init.volume, Some(&init.freeze))?;
    let (m, f) = load_mpi(&p)?;
    println!(
        "container {} bytes: volume equal {}, freeze mask equal {} ({} frozen)",
        std::fs::metadata(&p)?.len(),
        m == init.volume,
        f == init.freeze,
        f.count()
    );

    let cams: Vec<_> = sample_poses(&Pose::identity(), &PoseRanges::default(), 5, 1)
        .into_iter()
        .map(|pose| CameraModel::at_origin(k).with_pose(pose))
        .collect();
    let p = dir.path().join("t.json");
    write_trajectory(&p, &cams)?;
    println!("trajectory of {} cameras, equal on reload: {}", cams.len(), read_trajectory(&p)? == cams);
    Ok(())
}
