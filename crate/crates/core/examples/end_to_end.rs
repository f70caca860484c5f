//! Full pipeline on a synthetic scene with known ground truth: one RGB-D
//! view in, an expanded MPI out, scored on held-out renders.
//!
//! `cargo run --release --example end_to_end -- [iters] [size]`

use expanded_mpi::camera::{sample_poses, ExpansionSpec, Pose, PoseRanges};
use expanded_mpi::metrics::{psnr_masked, ssim_masked};
use expanded_mpi::mpi::{init_mpi, render_view, BilateralKernel, PlaneSpacing};
use expanded_mpi::optim::{optimize, OptimizeConfig};
use expanded_mpi::pseudo::build_pseudo_views;
use expanded_mpi::synthetic::{synthetic_scene, SceneConfig};
use expanded_mpi::warp::{forward_warp, SplatRadius};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let size: usize = args.next().map_or(Ok(128), |s| s.parse())?;

    let scene = synthetic_scene(&SceneConfig { size, ..SceneConfig::default() })?;
    let src = &scene.views[0];
    let (near, far) = scene.mpi.depth_range();
    let k = src.camera.intrinsics;

    let init = init_mpi(
        &src.rgb,
        &src.depth,
        &src.camera,
        scene.mpi.planes(),
        ExpansionSpec::from_factor(&k, scene.config.expansion)?,
        (near, far),
        PlaneSpacing::Depth,
    )?;
    let poses = sample_poses(&Pose::identity(), &PoseRanges::default(), 24, 1);
    let views = build_pseudo_views(&src.rgb, &src.depth, &src.camera, &poses, SplatRadius::default())?;

    let t = std::time::Instant::now();
    let config = OptimizeConfig { iters, ..Default::default() };
    let fit = optimize(&init.volume, &init.freeze, &BilateralKernel::default(), &views, &config)?;
    println!("optimized {iters} steps in {:.1?}", t.elapsed());

    let (mut ps, mut ss) = (Vec::new(), Vec::new());
    for (i, view) in scene.views.iter().enumerate().skip(1) {
        let visible = forward_warp(&src.rgb, &src.depth, &k, &k, &view.camera.pose, SplatRadius::default())?
            .hole_mask
            .invert();
        let out = render_view(&fit.mpi, &view.camera, config.filter_enabled.then_some(&fit.kernel))?;
        let (p, s) = (psnr_masked(&out.rgb, &view.rgb, &visible)?, ssim_masked(&out.rgb, &view.rgb, &visible)?);
        println!("view {i:2}: psnr {p:6.2} dB  ssim {s:.4}");
        ps.push(p);
        ss.push(s);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("held-out mean: psnr {:.2} dB  ssim {:.4}", mean(&ps), mean(&ss));
    Ok(())
}
