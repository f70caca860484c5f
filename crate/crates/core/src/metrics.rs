//! Image and depth quality metrics.
//!
//! SSIM is computed on luma with an 11x11 Gaussian window (sigma 1.5),
//! `C1 = 0.01^2`, `C2 = 0.03^2`, over windows that fit entirely inside the
//! image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthRaster, Mask, RgbImage, LUMA_WEIGHTS};
use crate::real::Real;

/// Reported for identical images, where the ratio is unbounded.
pub const PSNR_IDENTICAL: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_same(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if !a.same_size(b) {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_IDENTICAL
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_IDENTICAL)
    }
}

pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same(a, b)?;
    let se: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(psnr_from_mse(se / a.as_slice().len() as f64))
}

/// PSNR over the pixels where `mask` is true.
pub fn psnr_masked(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Result<f64> {
    check_same(a, b)?;
    check_mask(a.width(), a.height(), mask)?;
    let mut se = 0.0;
    for (i, _) in mask.as_slice().iter().enumerate().filter(|(_, m)| **m) {
        let (p, q) = (a.pixel(i), b.pixel(i));
        for c in 0..3 {
            se += (p[c] as f64 - q[c] as f64).powi(2);
        }
    }
    Ok(psnr_from_mse(se / (3 * mask.count()) as f64))
}

fn check_mask(w: usize, h: usize, mask: &Mask) -> Result<()> {
    if mask.width() != w || mask.height() != h {
        return Err(Error::Dimension(format!(
            "mask is {}x{}, image is {w}x{h}",
            mask.width(),
            mask.height()
        )));
    }
    if !mask.any() {
        return Err(Error::Degenerate("mask selects no pixels".into()));
    }
    Ok(())
}

pub(crate) fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable "valid" correlation: output is `(w - 10) x (h - 10)`.
fn blur_valid<F: Real>(src: &[F], w: usize, h: usize, g: &[F; SSIM_WINDOW]) -> Vec<F> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![F::zero(); ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = F::zero();
            for (k, &gk) in g.iter().enumerate() {
                acc += gk * src[y * w + x + k];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![F::zero(); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = F::zero();
            for (k, &gk) in g.iter().enumerate() {
                acc += gk * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Transpose of [`blur_valid`]: spreads an `(w - 10) x (h - 10)` map back
/// onto `w x h`.
fn blur_valid_adjoint<F: Real>(map: &[F], w: usize, h: usize, g: &[F; SSIM_WINDOW]) -> Vec<F> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![F::zero(); ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (k, &gk) in g.iter().enumerate() {
                rows[(y + k) * ow + x] += gk * v;
            }
        }
    }
    let mut out = vec![F::zero(); w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (k, &gk) in g.iter().enumerate() {
                out[y * w + x + k] += gk * v;
            }
        }
    }
    out
}

fn luma_of<F: Real>(rgb: &[F]) -> Vec<F> {
    rgb.chunks_exact(3)
        .map(|p| F::lit(LUMA_WEIGHTS[0]) * p[0] + F::lit(LUMA_WEIGHTS[1]) * p[1] + F::lit(LUMA_WEIGHTS[2]) * p[2])
        .collect()
}

struct SsimMoments<F> {
    mx: Vec<F>,
    my: Vec<F>,
    sxx: Vec<F>,
    syy: Vec<F>,
    sxy: Vec<F>,
}

fn moments<F: Real>(x: &[F], y: &[F], w: usize, h: usize) -> SsimMoments<F> {
    let g = gaussian_window().map(F::lit);
    let sq = |a: &[F], b: &[F]| a.iter().zip(b).map(|(p, q)| *p * *q).collect::<Vec<_>>();
    let mx = blur_valid(x, w, h, &g);
    let my = blur_valid(y, w, h, &g);
    let exx = blur_valid(&sq(x, x), w, h, &g);
    let eyy = blur_valid(&sq(y, y), w, h, &g);
    let exy = blur_valid(&sq(x, y), w, h, &g);
    let n = mx.len();
    let (mut sxx, mut syy, mut sxy) = (vec![F::zero(); n], vec![F::zero(); n], vec![F::zero(); n]);
    for i in 0..n {
        sxx[i] = exx[i] - mx[i] * mx[i];
        syy[i] = eyy[i] - my[i] * my[i];
        sxy[i] = exy[i] - mx[i] * my[i];
    }
    SsimMoments { mx, my, sxx, syy, sxy }
}

fn ssim_value<F: Real>(m: &SsimMoments<F>, i: usize) -> F {
    let (c1, c2) = (F::lit(C1), F::lit(C2));
    let a1 = F::lit(2.0) * m.mx[i] * m.my[i] + c1;
    let a2 = F::lit(2.0) * m.sxy[i] + c2;
    let b1 = m.mx[i] * m.mx[i] + m.my[i] * m.my[i] + c1;
    let b2 = m.sxx[i] + m.syy[i] + c2;
    (a1 * a2) / (b1 * b2)
}

fn check_window(w: usize, h: usize) -> Result<()> {
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    Ok(())
}

/// Local SSIM map, `(w - 10) x (h - 10)`, entry `(x, y)` centered on pixel
/// `(x + 5, y + 5)`.
pub fn ssim_map(a: &RgbImage, b: &RgbImage) -> Result<Vec<f64>> {
    check_same(a, b)?;
    let (w, h) = (a.width(), a.height());
    check_window(w, h)?;
    let m = moments(&a.luma(), &b.luma(), w, h);
    Ok((0..m.mx.len()).map(|i| ssim_value(&m, i)).collect())
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let map = ssim_map(a, b)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// Mean SSIM over windows whose center pixel is selected by `mask`.
pub fn ssim_masked(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Result<f64> {
    check_mask(a.width(), a.height(), mask)?;
    let map = ssim_map(a, b)?;
    let r = SSIM_WINDOW / 2;
    let ow = a.width() + 1 - SSIM_WINDOW;
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, v) in map.iter().enumerate() {
        if mask.get(i % ow + r, i / ow + r) {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("mask selects no complete SSIM window".into()));
    }
    Ok(sum / n as f64)
}

/// Mean SSIM of interleaved RGB buffers and its gradient with respect to
/// `x` (same layout as `x`).
pub(crate) fn ssim_with_grad<F: Real>(x: &[F], y: &[F], w: usize, h: usize) -> (F, Vec<F>) {
    let lx = luma_of(x);
    let ly = luma_of(y);
    let m = moments(&lx, &ly, w, h);
    let n = m.mx.len();
    let inv_n = F::one() / F::lit(n as f64);
    let (c1, c2) = (F::lit(C1), F::lit(C2));
    let two = F::lit(2.0);
    let mut mean = F::zero();
    let (mut g_mx, mut g_exx, mut g_exy) = (vec![F::zero(); n], vec![F::zero(); n], vec![F::zero(); n]);
    for i in 0..n {
        let (mx, my) = (m.mx[i], m.my[i]);
        let a1 = two * mx * my + c1;
        let a2 = two * m.sxy[i] + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = m.sxx[i] + m.syy[i] + c2;
        let s = (a1 * a2) / (b1 * b2);
        mean += s;
        let d_sxy = two * s / a2;
        let d_sxx = -s / b2;
        // sigma_x^2 = E[x^2] - mu_x^2 and sigma_xy = E[xy] - mu_x mu_y
        let d_mx = s * (two * my / a1 - two * mx / b1) - two * mx * d_sxx - my * d_sxy;
        g_mx[i] = d_mx * inv_n;
        g_exx[i] = d_sxx * inv_n;
        g_exy[i] = d_sxy * inv_n;
    }
    let g = gaussian_window().map(F::lit);
    let bmx = blur_valid_adjoint(&g_mx, w, h, &g);
    let bxx = blur_valid_adjoint(&g_exx, w, h, &g);
    let bxy = blur_valid_adjoint(&g_exy, w, h, &g);
    let mut grad = vec![F::zero(); x.len()];
    for p in 0..w * h {
        let dl = bmx[p] + two * lx[p] * bxx[p] + ly[p] * bxy[p];
        for c in 0..3 {
            grad[p * 3 + c] = F::lit(LUMA_WEIGHTS[c]) * dl;
        }
    }
    (mean * inv_n, grad)
}

/// Mean `|a - b|` over the masked pixels.
pub fn depth_l1(a: &DepthRaster, b: &DepthRaster, mask: &Mask) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    check_mask(a.width(), a.height(), mask)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .zip(mask.as_slice())
        .filter(|(_, m)| **m)
        .map(|((x, y), _)| (*x as f64 - *y as f64).abs())
        .sum();
    Ok(sum / mask.count() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_view: Vec<ViewMetrics>,
    pub mean: MeanMetrics,
}

impl MetricReport {
    /// Aggregate per-view metrics; the depth mean covers only views that
    /// report depth.
    pub fn from_views(per_view: Vec<ViewMetrics>) -> Result<Self> {
        if per_view.is_empty() {
            return Err(Error::Degenerate("no views to report".into()));
        }
        let n = per_view.len() as f64;
        let depths: Vec<f64> = per_view.iter().filter_map(|v| v.depth_l1).collect();
        let mean = MeanMetrics {
            psnr: per_view.iter().map(|v| v.psnr).sum::<f64>() / n,
            ssim: per_view.iter().map(|v| v.ssim).sum::<f64>() / n,
            depth_l1: (!depths.is_empty()).then(|| depths.iter().sum::<f64>() / depths.len() as f64),
        };
        Ok(Self { per_view, mean })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    #[test]
    fn psnr_closed_forms() {
        let a = random_image(8, 8, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
        let a = RgbImage::filled(8, 8, [0.2, 0.4, 0.6]);
        let b = RgbImage::filled(8, 8, [0.3, 0.5, 0.7]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&a, &RgbImage::new(4, 4)).is_err());
    }

    #[test]
    fn psnr_matches_scalar_loop() {
        let (a, b) = (random_image(13, 9, 2), random_image(13, 9, 3));
        let mut se = 0.0;
        for y in 0..9 {
            for x in 0..13 {
                for c in 0..3 {
                    se += (a.get(x, y)[c] as f64 - b.get(x, y)[c] as f64).powi(2);
                }
            }
        }
        let expect = 10.0 * (1.0 / (se / (13.0 * 9.0 * 3.0))).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_trivial_cases() {
        let a = random_image(16, 16, 4);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let g = RgbImage::filled(16, 16, [0.5; 3]);
        let neg = RgbImage::from_fn(16, 16, |x, y| g.get(x, y).map(|v| 1.0 - v));
        assert!((ssim(&g, &neg).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&RgbImage::new(10, 20), &RgbImage::new(10, 20)).is_err());
    }

    /// Direct 2D windowed evaluation, no separability.
    fn brute_ssim(a: &RgbImage, b: &RgbImage) -> f64 {
        let (w, h) = (a.width(), a.height());
        let (la, lb) = (a.luma(), b.luma());
        let g = gaussian_window();
        let mut total = 0.0;
        let mut n = 0;
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wt = g[i] * g[j];
                        let p = (y + i) * w + x + j;
                        mx += wt * la[p];
                        my += wt * lb[p];
                        xx += wt * la[p] * la[p];
                        yy += wt * lb[p] * lb[p];
                        xy += wt * la[p] * lb[p];
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                n += 1;
            }
        }
        total / n as f64
    }

    #[test]
    fn checkerboard_matches_brute_force() {
        let board = RgbImage::from_fn(24, 20, |x, y| if (x / 2 + y / 2) % 2 == 0 { [0.9; 3] } else { [0.1; 3] });
        let inv = RgbImage::from_fn(24, 20, |x, y| board.get(x, y).map(|v| 1.0 - v));
        assert!((ssim(&board, &inv).unwrap() - brute_ssim(&board, &inv)).abs() < 1e-6);
        let (a, b) = (random_image(17, 15, 5), random_image(17, 15, 6));
        assert!((ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs() < 1e-6);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let (w, h) = (14, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..w * h * 3).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..w * h * 3).map(|_| rng.gen()).collect();
        let (_, grad) = ssim_with_grad(&x, &y, w, h);
        let e = 1e-6;
        for _ in 0..80 {
            let i = rng.gen_range(0..x.len());
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += e;
            b[i] -= e;
            let num = (ssim_with_grad(&a, &y, w, h).0 - ssim_with_grad(&b, &y, w, h).0) / (2.0 * e);
            assert!((num - grad[i]).abs() < 1e-7, "{i}: {num} vs {}", grad[i]);
        }
    }

    #[test]
    fn masked_variants() {
        let (a, b) = (random_image(20, 20, 8), random_image(20, 20, 9));
        let all = Mask::new(20, 20, true);
        assert!((psnr_masked(&a, &b, &all).unwrap() - psnr(&a, &b).unwrap()).abs() < 1e-12);
        assert!((ssim_masked(&a, &b, &all).unwrap() - ssim(&a, &b).unwrap()).abs() < 1e-12);
        assert!(psnr_masked(&a, &b, &Mask::new(20, 20, false)).is_err());
        let corner = Mask::from_fn(20, 20, |x, y| x < 3 && y < 3);
        assert!(ssim_masked(&a, &b, &corner).is_err());
    }

    #[test]
    fn depth_l1_cases() {
        let a = DepthRaster::from_fn(6, 5, |x, y| 1.0 + (x * y) as f32 * 0.1).unwrap();
        let all = Mask::new(6, 5, true);
        assert_eq!(depth_l1(&a, &a, &all).unwrap(), 0.0);
        let b = DepthRaster::from_fn(6, 5, |x, y| a.get(x, y) + 0.5).unwrap();
        assert!((depth_l1(&a, &b, &all).unwrap() - 0.5).abs() < 1e-6);
        assert!(depth_l1(&a, &b, &Mask::new(6, 5, false)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = DepthRaster::from_fn(6, 5, |_, _| rng.gen_range(0.5..4.0)).unwrap();
        let mask = Mask::from_fn(6, 5, |_, _| rng.gen_bool(0.6));
        let (mut s, mut n) = (0.0, 0);
        for y in 0..5 {
            for x in 0..6 {
                if mask.get(x, y) {
                    s += (a.get(x, y) as f64 - c.get(x, y) as f64).abs();
                    n += 1;
                }
            }
        }
        assert!((depth_l1(&a, &c, &mask).unwrap() - s / n as f64).abs() < 1e-9);
    }

    #[test]
    fn report_aggregates() {
        let r = MetricReport::from_views(vec![
            ViewMetrics { name: "a".into(), psnr: 30.0, ssim: 0.9, depth_l1: Some(0.2) },
            ViewMetrics { name: "b".into(), psnr: 20.0, ssim: 0.7, depth_l1: None },
        ])
        .unwrap();
        assert_eq!(r.mean.psnr, 25.0);
        assert!((r.mean.ssim - 0.8).abs() < 1e-12);
        assert_eq!(r.mean.depth_l1, Some(0.2));
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
            let (a, b) = (random_image(12, 12, s1), random_image(12, 12, s2));
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn depth_l1_triangle_inequality(s in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut r = || DepthRaster::from_fn(5, 4, |_, _| rng.gen_range(0.1..5.0)).unwrap();
            let (a, b, c) = (r(), r(), r());
            let m = Mask::new(5, 4, true);
            prop_assert!(depth_l1(&a, &c, &m).unwrap() <= depth_l1(&a, &b, &m).unwrap() + depth_l1(&b, &c, &m).unwrap() + 1e-9);
        }
    }
}
