//! Reconstruction loss between a rendered view and its supervision image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::metrics::{ssim_with_grad, SSIM_WINDOW};
use crate::pseudo::PseudoView;
use crate::real::Real;

/// `L1` is the mean absolute error over all pixels and channels.
/// `L1PlusDssim` adds `dssim_weight * (1 - SSIM) / 2`, a structural term
/// standing in for the feature losses that are not implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    L1,
    L1PlusDssim,
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l1" => Ok(LossMode::L1),
            "l1_plus_dssim" => Ok(LossMode::L1PlusDssim),
            other => Err(format!("unknown loss mode '{other}' (expected l1 or l1_plus_dssim)")),
        }
    }
}

/// Loss of `rendered` against `target.rgb`.
pub fn mpi_loss(rendered: &RgbImage, target: &PseudoView, mode: LossMode, dssim_weight: f64) -> Result<f64> {
    if !rendered.same_size(&target.rgb) {
        return Err(Error::Dimension(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width(),
            rendered.height(),
            target.rgb.width(),
            target.rgb.height()
        )));
    }
    check_mode(mode, rendered.width(), rendered.height())?;
    let x: Vec<f64> = rendered.as_slice().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = target.rgb.as_slice().iter().map(|&v| v as f64).collect();
    Ok(loss_and_grad(&x, &y, rendered.width(), rendered.height(), mode, dssim_weight).0)
}

pub(crate) fn check_mode(mode: LossMode, w: usize, h: usize) -> Result<()> {
    if mode == LossMode::L1PlusDssim && (w < SSIM_WINDOW || h < SSIM_WINDOW) {
        return Err(Error::Dimension(format!(
            "structural loss needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    Ok(())
}

/// Loss and its gradient with respect to `rendered` (interleaved RGB).
/// The L1 subgradient at zero residual is zero.
pub(crate) fn loss_and_grad<F: Real>(
    rendered: &[F],
    target: &[F],
    width: usize,
    height: usize,
    mode: LossMode,
    dssim_weight: f64,
) -> (F, Vec<F>) {
    let inv_n = F::one() / F::lit(rendered.len() as f64);
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(rendered.len());
    for (&r, &t) in rendered.iter().zip(target) {
        let d = r - t;
        loss += d.abs();
        grad.push(if d > F::zero() {
            inv_n
        } else if d < F::zero() {
            -inv_n
        } else {
            F::zero()
        });
    }
    loss *= inv_n;
    if mode == LossMode::L1PlusDssim && dssim_weight != 0.0 {
        let (s, ds) = ssim_with_grad(rendered, target, width, height);
        let half_w = F::lit(dssim_weight * 0.5);
        loss += half_w * (F::one() - s);
        for (g, d) in grad.iter_mut().zip(ds) {
            *g -= half_w * d;
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraModel, Intrinsics};
    use crate::image::{DepthRaster, Mask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn view(rgb: RgbImage) -> PseudoView {
        let (w, h) = (rgb.width(), rgb.height());
        PseudoView {
            camera: CameraModel::at_origin(Intrinsics::centered(w, h, 1.0).unwrap()),
            rgb,
            depth: DepthRaster::constant(w, h, 1.0).unwrap(),
            inpaint_mask: Mask::new(w, h, false),
        }
    }

    fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> RgbImage {
        RgbImage::from_fn(w, h, |_, _| [rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9)])
    }

    #[test]
    fn closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_image(12, 12, &mut rng);
        assert_eq!(mpi_loss(&t, &view(t.clone()), LossMode::L1, 0.0).unwrap(), 0.0);
        assert_eq!(mpi_loss(&t, &view(t.clone()), LossMode::L1PlusDssim, 1.0).unwrap().abs() < 1e-12, true);
        let shifted = RgbImage::from_fn(12, 12, |x, y| t.get(x, y).map(|v| v + 0.1));
        assert!((mpi_loss(&shifted, &view(t.clone()), LossMode::L1, 0.0).unwrap() - 0.1).abs() < 1e-6);
        assert!(mpi_loss(&RgbImage::new(3, 3), &view(t), LossMode::L1, 0.0).is_err());
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_image(9, 7, &mut rng), random_image(9, 7, &mut rng));
        let mut s = 0.0;
        for y in 0..7 {
            for x in 0..9 {
                for c in 0..3 {
                    s += (a.get(x, y)[c] as f64 - b.get(x, y)[c] as f64).abs();
                }
            }
        }
        assert!((mpi_loss(&a, &view(b), LossMode::L1, 0.0).unwrap() - s / 189.0).abs() < 1e-7);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (13, 12);
        let x: Vec<f64> = (0..w * h * 3).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..w * h * 3).map(|_| rng.gen()).collect();
        let (_, g) = loss_and_grad(&x, &y, w, h, LossMode::L1PlusDssim, 0.7);
        let e = 1e-7;
        for _ in 0..50 {
            let i = rng.gen_range(0..x.len());
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += e;
            b[i] -= e;
            let num = (loss_and_grad(&a, &y, w, h, LossMode::L1PlusDssim, 0.7).0
                - loss_and_grad(&b, &y, w, h, LossMode::L1PlusDssim, 0.7).0)
                / (2.0 * e);
            assert!((num - g[i]).abs() < 1e-7, "{i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn parses_modes() {
        assert_eq!("l1".parse::<LossMode>().unwrap(), LossMode::L1);
        assert_eq!("l1_plus_dssim".parse::<LossMode>().unwrap(), LossMode::L1PlusDssim);
        assert!("l2".parse::<LossMode>().is_err());
    }
}
