//! Bilinear gather of RGB-sigma planes through a homography.
//!
//! Taps that fall outside the plane read as `(0, 0, 0, 0)`, i.e. fully
//! transparent, so the operation stays linear in the texel values.

use nalgebra::Matrix3;

use crate::camera::apply_homography;
use crate::error::{Error, Result};
use crate::real::Real;

use super::volume::CHANNELS;

/// Up to four bilinear taps: texel index (in texels, not floats) and weight.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Taps {
    pub index: [usize; 4],
    pub weight: [f64; 4],
    pub count: usize,
}

/// Bilinear taps at continuous plane coordinate `(x, y)`; zero-weight and
/// out-of-range taps are skipped.
#[inline]
pub(crate) fn bilinear_taps(width: usize, height: usize, x: f64, y: f64) -> Taps {
    let mut taps = Taps::default();
    if !(x > -1.0 && y > -1.0 && x < width as f64 && y < height as f64) {
        return taps;
    }
    // x, y > -1 here, so truncation plus a sign fix is floor
    let x0 = x as isize - (x < 0.0) as isize;
    let y0 = y as isize - (y < 0.0) as isize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let candidates = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for (tx, ty, w) in candidates {
        if w == 0.0 || tx < 0 || ty < 0 || tx >= width as isize || ty >= height as isize {
            continue;
        }
        taps.index[taps.count] = ty as usize * width + tx as usize;
        taps.weight[taps.count] = w;
        taps.count += 1;
    }
    taps
}

#[inline]
pub(crate) fn gather<F: Real>(plane: &[F], taps: &Taps) -> [F; CHANNELS] {
    let mut out = [F::zero(); CHANNELS];
    for t in 0..taps.count {
        let w = F::lit(taps.weight[t]);
        let base = taps.index[t] * CHANNELS;
        for c in 0..CHANNELS {
            out[c] += w * plane[base + c];
        }
    }
    out
}

#[inline]
pub(crate) fn scatter<F: Real>(grad_plane: &mut [F], taps: &Taps, grad: &[F; CHANNELS]) {
    for t in 0..taps.count {
        let w = F::lit(taps.weight[t]);
        let base = taps.index[t] * CHANNELS;
        for c in 0..CHANNELS {
            grad_plane[base + c] += w * grad[c];
        }
    }
}

/// Resample one `plane_width x plane_height` RGB-sigma plane into an
/// `out_width x out_height` grid. `homography` maps output pixels to plane
/// coordinates (gather direction).
pub fn resample_plane<F: Real>(
    plane: &[F],
    plane_width: usize,
    plane_height: usize,
    homography: &Matrix3<f64>,
    out_width: usize,
    out_height: usize,
) -> Result<Vec<F>> {
    if plane.len() != plane_width * plane_height * CHANNELS {
        return Err(Error::Dimension(format!(
            "plane has {} values, expected {plane_width}x{plane_height}x4",
            plane.len()
        )));
    }
    let det = homography.determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::Singular);
    }
    let mut out = vec![F::zero(); out_width * out_height * CHANNELS];
    for v in 0..out_height {
        for u in 0..out_width {
            if let Some((x, y)) = apply_homography(homography, u as f64, v as f64) {
                let taps = bilinear_taps(plane_width, plane_height, x, y);
                let s = gather(plane, &taps);
                let i = (v * out_width + u) * CHANNELS;
                out[i..i + CHANNELS].copy_from_slice(&s);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(w: usize, h: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..w * h * 4).map(|_| rng.gen()).collect()
    }

    #[test]
    fn identity_is_bitwise() {
        let p = random_plane(9, 7, 1);
        let out = resample_plane(&p, 9, 7, &Matrix3::identity(), 9, 7).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn half_pixel_shift_of_constant_plane_is_constant_inside() {
        let p = vec![0.25f64; 8 * 8 * 4];
        let h = Matrix3::new(1.0, 0.0, 0.5, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0);
        let out = resample_plane(&p, 8, 8, &h, 8, 8).unwrap();
        for v in 0..7 {
            for u in 0..7 {
                for c in 0..4 {
                    assert!((out[(v * 8 + u) * 4 + c] - 0.25).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn outside_samples_are_transparent() {
        let p = vec![1.0f64; 4 * 4 * 4];
        let h = Matrix3::new(1.0, 0.0, 10.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let out = resample_plane(&p, 4, 4, &h, 4, 4).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singular_homography_is_rejected() {
        let p = vec![0.0f64; 4 * 4 * 4];
        let h = Matrix3::new(1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(resample_plane(&p, 4, 4, &h, 4, 4), Err(Error::Singular)));
    }

    #[test]
    fn matches_hand_evaluated_bilinear() {
        let (w, h) = (11, 9);
        let p = random_plane(w, h, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let hm = Matrix3::new(
                rng.gen_range(0.8..1.2),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(0.8..1.2),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.005..0.005),
                rng.gen_range(-0.005..0.005),
                1.0,
            );
            let out = resample_plane(&p, w, h, &hm, w, h).unwrap();
            for v in 0..h {
                for u in 0..w {
                    let q = hm * nalgebra::Vector3::new(u as f64, v as f64, 1.0);
                    let (x, y) = (q.x / q.z, q.y / q.z);
                    let texel = |tx: i64, ty: i64, c: usize| -> f64 {
                        if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
                            0.0
                        } else {
                            p[((ty as usize) * w + tx as usize) * 4 + c]
                        }
                    };
                    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
                    let (a, b) = (x - x.floor(), y - y.floor());
                    for c in 0..4 {
                        let expect = (1.0 - a) * (1.0 - b) * texel(x0, y0, c)
                            + a * (1.0 - b) * texel(x0 + 1, y0, c)
                            + (1.0 - a) * b * texel(x0, y0 + 1, c)
                            + a * b * texel(x0 + 1, y0 + 1, c);
                        assert!((out[(v * w + u) * 4 + c] - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn resampling_is_linear(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let (w, h) = (7, 6);
            let a = random_plane(w, h, seed);
            let b = random_plane(w, h, seed.wrapping_add(1));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hm = Matrix3::new(1.0, rng.gen_range(-0.2..0.2), rng.gen_range(-2.0..2.0),
                                  rng.gen_range(-0.2..0.2), 1.0, rng.gen_range(-2.0..2.0), 0.0, 0.0, 1.0);
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let ra = resample_plane(&a, w, h, &hm, w, h).unwrap();
            let rb = resample_plane(&b, w, h, &hm, w, h).unwrap();
            let rm = resample_plane(&mix, w, h, &hm, w, h).unwrap();
            for i in 0..rm.len() {
                prop_assert!((rm[i] - (alpha * ra[i] + beta * rb[i])).abs() < 1e-6);
            }
        }
    }
}
