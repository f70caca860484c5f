//! Fit the trainable texels of an initialized MPI to pseudo views and
//! watch the loss trace.
//!
//! `cargo run --release --example optimize_views -- [iters]`

use expanded_mpi::camera::{sample_poses, ExpansionSpec, Pose, PoseRanges};
use expanded_mpi::mpi::{init_mpi, BilateralKernel, PlaneSpacing};
use expanded_mpi::optim::{optimize, LossMode, OptimizeConfig};
use expanded_mpi::pseudo::build_pseudo_views;
use expanded_mpi::synthetic::{synthetic_scene, SceneConfig};
use expanded_mpi::warp::SplatRadius;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iters: usize = std::env::args().nth(1).map_or(Ok(200), |s| s.parse())?;
    let scene = synthetic_scene(&SceneConfig { views: 1, ..SceneConfig::small() })?;
    let src = &scene.views[0];
    let init = init_mpi(
        &src.rgb,
        &src.depth,
        &src.camera,
        8,
        ExpansionSpec::from_factor(&src.camera.intrinsics, 1.35)?,
        scene.mpi.depth_range(),
        PlaneSpacing::Depth,
    )?;
    let poses = sample_poses(&Pose::identity(), &PoseRanges::default(), 12, 5);
    let views = build_pseudo_views(&src.rgb, &src.depth, &src.camera, &poses, SplatRadius::Point)?;

    let config = OptimizeConfig {
        iters,
        loss_mode: LossMode::L1PlusDssim,
        dssim_weight: 0.2,
        ..OptimizeConfig::default()
    };
    let fit = optimize(&init.volume, &init.freeze, &BilateralKernel::default(), &views, &config)?;
    for row in fit.trace.iter().step_by((iters / 10).max(1)).chain(fit.trace.last()) {
        println!("step {:4}: loss {:.5}, reference view {:.2} dB", row.step, row.loss, row.psnr_ref);
    }
    let centre = fit.kernel.spatial_weights[fit.kernel.spatial_weights.len() / 2];
    println!("learned filter centre weight {centre:.4} (initial 1.0)");
    Ok(())
}
