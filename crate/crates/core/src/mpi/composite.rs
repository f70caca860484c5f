//! Front-to-back volume compositing of resampled planes.
//!
//! For planes ordered near to far, with `alpha_k = 1 - exp(-sigma_k * delta_k)`:
//!
//! ```text
//! T_1 = 1,  T_k = prod_{j<k} (1 - alpha_j)
//! I   = sum_k T_k * alpha_k * c_k
//! ```

use crate::real::Real;

use super::volume::CHANNELS;

#[inline]
pub(crate) fn alpha<F: Real>(sigma: F, delta: F) -> F {
    -(-(sigma * delta)).exp_m1()
}

/// Composite one pixel. `samples[k]` is plane `k`'s `(r, g, b, sigma)`.
/// Returns the color and the transmittance left after the last plane.
#[inline]
pub fn composite_pixel<F: Real>(samples: &[[F; CHANNELS]], deltas: &[F]) -> ([F; 3], F) {
    let mut out = [F::zero(); 3];
    let mut t = F::one();
    for (s, &d) in samples.iter().zip(deltas) {
        let a = alpha(s[3], d);
        let w = t * a;
        for c in 0..3 {
            out[c] += w * s[c];
        }
        t *= F::one() - a;
    }
    (out, t)
}

/// Adjoint of [`composite_pixel`]: given `d_out = dL/dI`, write
/// `dL/d(r, g, b, sigma)` of every plane sample into `grad`.
///
/// Uses the suffix recursion `R_k = alpha_k g_k + (1 - alpha_k) R_{k+1}`
/// (with `g_k = d_out . c_k`) so no division by `1 - alpha` is needed.
#[inline]
pub(crate) fn composite_pixel_backward<F: Real>(
    samples: &[[F; CHANNELS]],
    deltas: &[F],
    d_out: &[F; 3],
    grad: &mut [[F; CHANNELS]],
    scratch: &mut Vec<(F, F)>,
) {
    scratch.clear();
    let mut t = F::one();
    for (s, &d) in samples.iter().zip(deltas) {
        let a = alpha(s[3], d);
        scratch.push((t, a));
        t *= F::one() - a;
    }
    let mut rest = F::zero();
    for k in (0..samples.len()).rev() {
        let s = &samples[k];
        let g = d_out[0] * s[0] + d_out[1] * s[1] + d_out[2] * s[2];
        let (t, a) = scratch[k];
        let w = t * a;
        for c in 0..3 {
            grad[k][c] = w * d_out[c];
        }
        let d_alpha = t * (g - rest);
        // d alpha / d sigma = delta * exp(-sigma delta) = delta * (1 - alpha)
        grad[k][3] = d_alpha * deltas[k] * (F::one() - a);
        rest = a * g + (F::one() - a) * rest;
    }
}

/// Composite a `planes x pixels x 4` stack (near to far). Returns the RGB
/// image (`pixels x 3`) and the accumulated opacity `1 - T` per pixel.
pub fn composite<F: Real>(planes: &[F], pixels: usize, deltas: &[f64]) -> (Vec<F>, Vec<F>) {
    let p = deltas.len();
    assert_eq!(planes.len(), p * pixels * CHANNELS, "plane stack size mismatch");
    let deltas: Vec<F> = deltas.iter().map(|&d| F::lit(d)).collect();
    let mut rgb = vec![F::zero(); pixels * 3];
    let mut acc = vec![F::zero(); pixels];
    let mut samples = vec![[F::zero(); CHANNELS]; p];
    for i in 0..pixels {
        for k in 0..p {
            let b = (k * pixels + i) * CHANNELS;
            samples[k].copy_from_slice(&planes[b..b + CHANNELS]);
        }
        let (c, t) = composite_pixel(&samples, &deltas);
        rgb[i * 3..i * 3 + 3].copy_from_slice(&c);
        acc[i] = F::one() - t;
    }
    (rgb, acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn opaque_single_plane() {
        let (c, t) = composite_pixel(&[[1.0, 0.0, 0.0, 20.0]], &[1.0f64]);
        assert!((c[0] - 1.0).abs() < 1e-8 && c[1] == 0.0 && c[2] == 0.0);
        assert!(t < 1e-8);
    }

    #[test]
    fn half_then_opaque() {
        let ln2 = std::f64::consts::LN_2;
        let (c, _) = composite_pixel(&[[1.0, 0.0, 0.0, ln2], [0.0, 0.0, 1.0, 20.0]], &[1.0, 1.0]);
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!(c[1].abs() < 1e-12);
        // 0.5 * (1 - e^-20)
        assert!((c[2] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn empty_volume_is_black_and_transparent() {
        let planes = vec![[0.3, 0.6, 0.9, 0.0f64]; 5];
        let (c, t) = composite_pixel(&planes, &[0.7; 5]);
        assert_eq!(c, [0.0; 3]);
        assert_eq!(t, 1.0);
    }

    fn brute_force(samples: &[[f64; 4]], deltas: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..samples.len() {
            let mut acc = 0.0;
            for j in 0..i {
                acc += samples[j][3] * deltas[j];
            }
            let t = (-acc).exp();
            let a = 1.0 - (-samples[i][3] * deltas[i]).exp();
            for c in 0..3 {
                out[c] += t * a * samples[i][c];
            }
        }
        out
    }

    #[test]
    fn slice_composite_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, n) = (6, 50);
        let planes: Vec<f64> = (0..p * n * 4).map(|_| rng.gen_range(0.0..2.0)).collect();
        let deltas: Vec<f64> = (0..p).map(|_| rng.gen_range(0.1..1.0)).collect();
        let (rgb, acc) = composite(&planes, n, &deltas);
        for i in 0..n {
            let s: Vec<[f64; 4]> = (0..p)
                .map(|k| {
                    let b = (k * n + i) * 4;
                    [planes[b], planes[b + 1], planes[b + 2], planes[b + 3]]
                })
                .collect();
            let e = brute_force(&s, &deltas);
            for c in 0..3 {
                assert!((rgb[i * 3 + c] - e[c]).abs() < 1e-12);
            }
            let tot: f64 = (0..p).map(|k| s[k][3] * deltas[k]).sum();
            assert!((acc[i] - (1.0 - (-tot).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let p = rng.gen_range(1..6);
            let samples: Vec<[f64; 4]> = (0..p)
                .map(|_| [rng.gen(), rng.gen(), rng.gen(), rng.gen_range(0.0..3.0)])
                .collect();
            let deltas: Vec<f64> = (0..p).map(|_| rng.gen_range(0.2..1.0)).collect();
            let d_out = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let mut grad = vec![[0.0; 4]; p];
            composite_pixel_backward(&samples, &deltas, &d_out, &mut grad, &mut Vec::new());
            let loss = |s: &[[f64; 4]]| {
                let (c, _) = composite_pixel(s, &deltas);
                c[0] * d_out[0] + c[1] * d_out[1] + c[2] * d_out[2]
            };
            let h = 1e-6;
            for k in 0..p {
                for c in 0..4 {
                    let mut a = samples.clone();
                    let mut b = samples.clone();
                    a[k][c] += h;
                    b[k][c] -= h;
                    let num = (loss(&a) - loss(&b)) / (2.0 * h);
                    assert!((num - grad[k][c]).abs() < 1e-7, "plane {k} channel {c}: {num} vs {}", grad[k][c]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn output_stays_in_unit_range(seed in any::<u64>(), p in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<[f64; 4]> = (0..p).map(|_| [rng.gen(), rng.gen(), rng.gen(), rng.gen_range(0.0..50.0)]).collect();
            let deltas: Vec<f64> = (0..p).map(|_| rng.gen_range(0.01..2.0)).collect();
            let (c, t) = composite_pixel(&samples, &deltas);
            for v in c {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!((0.0..=1.0).contains(&t));
        }

        #[test]
        fn denser_near_plane_never_boosts_farther_planes(
            seed in any::<u64>(), p in 2usize..8, near in 0usize..7, bump in 0.0f64..5.0
        ) {
            let near = near % (p - 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<[f64; 4]> = (0..p).map(|_| [rng.gen(), rng.gen(), rng.gen(), rng.gen_range(0.0..3.0)]).collect();
            let deltas = vec![0.5; p];
            let contributions = |s: &[[f64; 4]]| -> Vec<f64> {
                let mut t = 1.0;
                s.iter().zip(&deltas).map(|(x, &d)| {
                    let a = alpha(x[3], d);
                    let w = t * a;
                    t *= 1.0 - a;
                    w
                }).collect()
            };
            let before = contributions(&samples);
            let mut raised = samples.clone();
            raised[near][3] += bump;
            let after = contributions(&raised);
            for k in near + 1..p {
                prop_assert!(after[k] <= before[k] + 1e-15);
            }
        }
    }
}
