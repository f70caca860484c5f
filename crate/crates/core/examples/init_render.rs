//! Lift one RGB-D view into an expanded MPI and render it back, at the
//! source pose and from rotated cameras that look past the source frame.
//!
//! `cargo run --example init_render`

use expanded_mpi::camera::{CameraModel, ExpansionSpec, Intrinsics, Pose};
use expanded_mpi::image::{DepthRaster, Mask, RgbImage};
use expanded_mpi::metrics::psnr_masked;
use expanded_mpi::mpi::{init_mpi, render_view, PlaneSpacing};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (96, 72);
    let rgb = RgbImage::from_fn(w, h, |x, y| {
        let (u, v) = (x as f32 / w as f32, y as f32 / h as f32);
        [u, 1.0 - v, 0.5 + 0.3 * (9.0 * u).sin()]
    });
    let depth = DepthRaster::from_fn(w, h, |x, y| 2.0 + 3.0 * (x + y) as f32 / (w + h) as f32)?;
    let k = Intrinsics::centered(w, h, 60f64.to_radians())?;
    let camera = CameraModel::at_origin(k);

    for planes in [8, 32, 64] {
        let init = init_mpi(
            &rgb,
            &depth,
            &camera,
            planes,
            ExpansionSpec::from_theta(&k, 90f64.to_radians())?,
            depth.range(),
            PlaneSpacing::Disparity,
        )?;
        let m = &init.volume;
        let back = render_view(m, &camera, None)?;
        let psnr = psnr_masked(&back.rgb, &rgb, &Mask::new(w, h, true))?;
        println!(
            "P={planes:2}: planes {}x{} (a = {:.3}), {} frozen texels, self-reconstruction {psnr:.2} dB",
            m.width(),
            m.height(),
            m.expansion().a,
            init.freeze.count()
        );
        if planes == 64 {
            for deg in [5.0, 15.0, 25.0] {
                let r = render_view(m, &camera.with_pose(Pose::from_yaw_pitch(f64::to_radians(deg), 0.0)), None)?;
                let empty = r.opacity.iter().filter(|&&a| a < 0.5).count();
                println!(
                    "  yaw {deg:4.1} deg: {empty} px see no content yet, {} px leave the expanded frustum",
                    r.out_of_frustum
                );
            }
        }
    }
    Ok(())
}
