//! How far a camera can turn before it sees past the expanded planes.
//! A 90 degree camera with planes expanded to a 120 degree frustum stays
//! covered up to 15 degrees of yaw.
//!
//! `cargo run --release --example coverage_sweep`

use expanded_mpi::camera::{CameraModel, ExpansionSpec, Intrinsics, Pose};
use expanded_mpi::mpi::volume::{CHANNELS, OPAQUE_SIGMA_DELTA};
use expanded_mpi::mpi::{render_view, MpiVolume, PlaneSpacing};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (64, 48);
    let f = w as f64 / 2.0;
    let k = Intrinsics::new(f, f, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0, w, h)?;
    for theta in [90.0, 120.0, 150.0] {
        let spec = ExpansionSpec::from_theta(&k, f64::to_radians(theta))?;
        let mut mpi = MpiVolume::new(CameraModel::at_origin(k), 4, spec, (2.0, 8.0), PlaneSpacing::Depth)?;
        let deltas = mpi.deltas();
        let stride = mpi.plane_len() * CHANNELS;
        for (p, plane) in mpi.texels.chunks_exact_mut(stride).enumerate() {
            for t in plane.chunks_exact_mut(CHANNELS) {
                t[3] = (OPAQUE_SIGMA_DELTA / deltas[p]) as f32;
            }
        }
        let covered_to = (0..=60)
            .map(|i| i as f64 * 0.5)
            .take_while(|&deg| {
                let cam = mpi.reference().with_pose(Pose::from_yaw_pitch(deg.to_radians(), 0.0));
                render_view(&mpi, &cam, None).map(|r| r.out_of_frustum == 0).unwrap_or(false)
            })
            .last()
            .unwrap_or(0.0);
        println!(
            "theta {theta:5.1} deg (a = {:.3}, planes {}x{}): covered up to {covered_to:.1} deg yaw, predicted {:.1}",
            spec.a,
            mpi.width(),
            mpi.height(),
            (theta - 90.0) / 2.0
        );
    }
    Ok(())
}
