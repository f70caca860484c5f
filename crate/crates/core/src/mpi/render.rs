//! Novel-view rendering of an expanded MPI: per-plane homography gather,
//! front-to-back compositing, then the optional bilateral filter.
//!
//! The generic forward/backward pair here is the single code path used by
//! both [`render_view`] and the optimizer.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::camera::{apply_homography, plane_homography, CameraModel};
use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage};
use crate::real::Real;

use super::composite::{composite_pixel, composite_pixel_backward};
use super::filter::{filter_backward, filter_forward, validate_for, BilateralKernel};
use super::resample::{bilinear_taps, gather, scatter, Taps};
use super::volume::{MpiVolume, CHANNELS};

/// Sampling geometry of one target camera against one volume.
#[derive(Debug, Clone)]
pub struct ViewGeometry {
    /// Per plane: target pixel -> plane texel coordinate.
    gather: Vec<Matrix3<f64>>,
    plane_width: usize,
    plane_height: usize,
    width: usize,
    height: usize,
    deltas: Vec<f64>,
}

impl ViewGeometry {
    pub fn new(mpi: &MpiVolume, target: &CameraModel) -> Result<Self> {
        target.intrinsics.validate()?;
        target.pose.validate()?;
        let source = mpi.plane_intrinsics();
        let relative = target.pose.relative_to(mpi.reference_pose());
        let gather = mpi
            .plane_depths()
            .iter()
            .map(|&d| {
                plane_homography(&source, &target.intrinsics, &relative, d)?
                    .try_inverse()
                    .ok_or(Error::Singular)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            gather,
            plane_width: mpi.width(),
            plane_height: mpi.height(),
            width: target.width(),
            height: target.height(),
            deltas: mpi.deltas(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn planes(&self) -> usize {
        self.gather.len()
    }

    #[inline]
    fn taps(&self, plane: usize, pixel: usize) -> Taps {
        let (u, v) = ((pixel % self.width) as f64, (pixel / self.width) as f64);
        match apply_homography(&self.gather[plane], u, v) {
            Some((x, y)) => bilinear_taps(self.plane_width, self.plane_height, x, y),
            None => Taps::default(),
        }
    }

    /// True where every plane's sample lands inside the expanded plane.
    pub fn coverage(&self) -> Mask {
        let (pw, ph) = ((self.plane_width - 1) as f64, (self.plane_height - 1) as f64);
        let tol = 1e-9;
        Mask::from_fn(self.width, self.height, |u, v| {
            self.gather.iter().all(|h| match apply_homography(h, u as f64, v as f64) {
                Some((x, y)) => x >= -tol && y >= -tol && x <= pw + tol && y <= ph + tol,
                None => false,
            })
        })
    }
}

/// Spatial filter parameters in the working precision.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FilterParams<'a, F> {
    pub size: usize,
    pub weights: &'a [F],
    pub sigma_r: f64,
}

/// Intermediate values kept for the backward pass.
pub(crate) struct Tape<F> {
    /// Composited RGB before filtering (`pixels x 3`).
    pub composited: Vec<F>,
    /// Final RGB (filtered when a filter was supplied).
    pub output: Vec<F>,
    /// Accumulated opacity `1 - T` per pixel.
    pub opacity: Vec<F>,
    /// Plane samples and their bilinear taps, pixel-major (`pixels x planes`).
    pub samples: Vec<[F; CHANNELS]>,
    pub taps: Vec<Taps>,
}

pub(crate) fn forward<F: Real>(texels: &[F], geom: &ViewGeometry, filter: Option<FilterParams<'_, F>>) -> Tape<F> {
    let n = geom.pixels();
    let p = geom.planes();
    let plane_len = geom.plane_width * geom.plane_height * CHANNELS;
    let deltas: Vec<F> = geom.deltas.iter().map(|&d| F::lit(d)).collect();
    let mut composited = vec![F::zero(); n * 3];
    let mut opacity = vec![F::zero(); n];
    let mut samples = vec![[F::zero(); CHANNELS]; n * p];
    let mut taps = vec![Taps::default(); n * p];
    composited
        .par_chunks_mut(3)
        .zip(opacity.par_iter_mut())
        .zip(samples.par_chunks_mut(p).zip(taps.par_chunks_mut(p)))
        .enumerate()
        .for_each(|(i, ((rgb, acc), (s, t)))| {
            for k in 0..p {
                t[k] = geom.taps(k, i);
                s[k] = gather(&texels[k * plane_len..(k + 1) * plane_len], &t[k]);
            }
            let (c, tr) = composite_pixel(s, &deltas);
            rgb.copy_from_slice(&c);
            *acc = F::one() - tr;
        });
    let output = match filter {
        Some(f) => filter_forward(&composited, geom.width, geom.height, f.size, f.weights, f.sigma_r),
        None => composited.clone(),
    };
    Tape {
        composited,
        output,
        opacity,
        samples,
        taps,
    }
}

/// Accumulate `dL/d texels` into `d_texels` and return `dL/d filter weights`
/// (empty without a filter), given `d_output = dL/d tape.output`.
pub(crate) fn backward<F: Real>(
    geom: &ViewGeometry,
    filter: Option<FilterParams<'_, F>>,
    tape: &Tape<F>,
    d_output: &[F],
    d_texels: &mut [F],
) -> Vec<F> {
    let n = geom.pixels();
    let p = geom.planes();
    let plane_len = geom.plane_width * geom.plane_height * CHANNELS;
    let (d_composited, d_weights) = match filter {
        Some(f) => filter_backward(
            &tape.composited,
            geom.width,
            geom.height,
            f.size,
            f.weights,
            f.sigma_r,
            &tape.output,
            d_output,
        ),
        None => (d_output.to_vec(), Vec::new()),
    };
    let deltas: Vec<F> = geom.deltas.iter().map(|&d| F::lit(d)).collect();

    // dL/d(sample) per pixel and plane, pixel-major.
    let mut d_samples = vec![[F::zero(); CHANNELS]; n * p];
    d_samples
        .par_chunks_mut(p)
        .enumerate()
        .for_each_init(
            || Vec::with_capacity(p),
            |scratch, (i, out)| {
                let g = [d_composited[i * 3], d_composited[i * 3 + 1], d_composited[i * 3 + 2]];
                if g.iter().all(|v| *v == F::zero()) {
                    return;
                }
                composite_pixel_backward(&tape.samples[i * p..(i + 1) * p], &deltas, &g, out, scratch);
            },
        );

    // Each plane is scattered by one task in pixel order: deterministic.
    d_texels
        .par_chunks_mut(plane_len)
        .enumerate()
        .for_each(|(k, plane)| {
            for i in 0..n {
                let g = &d_samples[i * p + k];
                if g.iter().all(|v| *v == F::zero()) {
                    continue;
                }
                scatter(plane, &tape.taps[i * p + k], g);
            }
        });
    d_weights
}

/// A rendered view.
#[derive(Debug, Clone)]
pub struct Rendering {
    pub rgb: RgbImage,
    /// Accumulated opacity `1 - T` per pixel, before filtering.
    pub opacity: Vec<f32>,
    /// True where the pixel's ray stays inside the expanded planes.
    pub coverage: Mask,
    /// Pixels whose ray leaves the expanded frustum on some plane.
    pub out_of_frustum: usize,
}

/// Render `mpi` from `target`, optionally passing the result through the
/// bilateral filter.
///
/// Rays that leave the expanded planes read transparent texels; such pixels
/// are flagged in [`Rendering::coverage`] and logged as a warning.
pub fn render_view(mpi: &MpiVolume, target: &CameraModel, filter: Option<&BilateralKernel>) -> Result<Rendering> {
    let geom = ViewGeometry::new(mpi, target)?;
    if let Some(k) = filter {
        validate_for(k, geom.width, geom.height)?;
    }
    let texels: Vec<f64> = mpi.texels.iter().map(|&v| v as f64).collect();
    let params = filter.map(|k| FilterParams {
        size: k.size,
        weights: &k.spatial_weights,
        sigma_r: k.sigma_r,
    });
    let tape = forward(&texels, &geom, params);
    let coverage = geom.coverage();
    let out_of_frustum = coverage.as_slice().iter().filter(|c| !**c).count();
    if out_of_frustum > 0 {
        log::warn!(
            "{out_of_frustum} of {} pixels look outside the expanded frustum and render transparent",
            geom.pixels()
        );
    }
    Ok(Rendering {
        rgb: RgbImage::from_vec(
            geom.width,
            geom.height,
            tape.output.iter().map(|&v| v as f32).collect(),
        )?,
        opacity: tape.opacity.iter().map(|&v| v as f32).collect(),
        coverage,
        out_of_frustum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{ExpansionSpec, Intrinsics, Pose};
    use crate::image::DepthRaster;
    use crate::mpi::volume::{init_mpi, PlaneSpacing, OPAQUE_SIGMA_DELTA};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
        let mse = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            / a.as_slice().len() as f64;
        10.0 * (1.0 / mse).log10()
    }

    #[test]
    fn reference_render_of_initialized_mpi_reproduces_source() {
        let (w, h) = (48, 40);
        let k = Intrinsics::centered(w, h, 60f64.to_radians()).unwrap();
        let cam = CameraModel::at_origin(k);
        let rgb = RgbImage::from_fn(w, h, |x, y| {
            let (u, v) = (x as f32 / w as f32, y as f32 / h as f32);
            [u, v, 0.5 + 0.4 * (6.0 * u).sin() * (5.0 * v).cos()]
        });
        let depth = DepthRaster::from_fn(w, h, |x, y| 2.0 + 3.0 * (x + y) as f32 / (w + h) as f32).unwrap();
        let exp = ExpansionSpec::from_theta(&k, 80f64.to_radians()).unwrap();
        let init = init_mpi(&rgb, &depth, &cam, 64, exp, (2.0, 5.0), PlaneSpacing::Depth).unwrap();
        let r = render_view(&init.volume, &cam, None).unwrap();
        assert!(psnr(&r.rgb, &rgb) >= 40.0);
        assert_eq!(r.out_of_frustum, 0);
    }

    /// Single opaque plane whose color is affine in texel coordinates, so
    /// bilinear sampling is exact and rendering is a pure coordinate map.
    fn affine_plane_volume(w: usize, h: usize, a: f64) -> MpiVolume {
        let k = Intrinsics::centered(w, h, 60f64.to_radians()).unwrap();
        let cam = CameraModel::at_origin(k);
        let mut mpi = MpiVolume::new(
            cam,
            2,
            ExpansionSpec::from_factor(&k, a).unwrap(),
            (3.0, 6.0),
            PlaneSpacing::Depth,
        )
        .unwrap();
        let sigma = (OPAQUE_SIGMA_DELTA / mpi.delta()) as f32;
        let (pw, ph) = (mpi.width(), mpi.height());
        for y in 0..ph {
            for x in 0..pw {
                let (u, v) = (x as f32 / pw as f32, y as f32 / ph as f32);
                mpi.set_texel(0, x, y, [0.1 + 0.8 * u, 0.1 + 0.8 * v, 0.5 * u + 0.3 * v, sigma]);
                mpi.set_texel(1, x, y, [0.0, 0.0, 0.0, 0.0]);
            }
        }
        mpi
    }

    #[test]
    fn camera_roll_rotates_the_image() {
        let (w, h) = (40, 40);
        let mpi = affine_plane_volume(w, h, 1.6);
        let reference = mpi.reference().clone();
        let base = render_view(&mpi, &reference, None).unwrap();
        let roll = 0.2;
        let rolled = render_view(&mpi, &reference.with_pose(Pose::from_roll(roll)), None).unwrap();
        let k = reference.intrinsics;
        let r = Pose::from_roll(roll).rotation.transpose();
        let map = k.matrix() * r * k.inverse_matrix();
        let mut checked = 0;
        for v in 0..h {
            for u in 0..w {
                let (x, y) = apply_homography(&map, u as f64, v as f64).unwrap();
                if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                    continue;
                }
                let (x0, y0) = (x.floor() as usize, y.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
                let got = rolled.rgb.get(u, v);
                for c in 0..3 {
                    let expect = (1.0 - fx) * (1.0 - fy) * base.rgb.get(x0, y0)[c]
                        + fx * (1.0 - fy) * base.rgb.get(x1, y0)[c]
                        + (1.0 - fx) * fy * base.rgb.get(x0, y1)[c]
                        + fx * fy * base.rgb.get(x1, y1)[c];
                    assert!((got[c] - expect).abs() < 1e-4, "({u},{v}) channel {c}: {} vs {expect}", got[c]);
                }
                checked += 1;
            }
        }
        assert!(checked > w * h / 2);
    }

    #[test]
    fn yaw_coverage_follows_the_expanded_frustum() {
        let (w, h) = (64, 48);
        let k = Intrinsics::new(w as f64 / 2.0, w as f64 / 2.0, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0, w, h).unwrap();
        let exp = ExpansionSpec::from_theta(&k, 120f64.to_radians()).unwrap();
        let mut mpi = MpiVolume::new(CameraModel::at_origin(k), 4, exp, (2.0, 8.0), PlaneSpacing::Depth).unwrap();
        let sigma = (OPAQUE_SIGMA_DELTA / mpi.delta()) as f32;
        for t in mpi.texels.chunks_exact_mut(CHANNELS) {
            t[3] = sigma;
        }
        let reference = mpi.reference().clone();
        for deg in [0.0, 5.0, 10.0, 14.5] {
            let r = render_view(&mpi, &reference.with_pose(Pose::from_yaw_pitch(f64::to_radians(deg), 0.0)), None).unwrap();
            assert!(r.opacity.iter().all(|&a| a >= 0.99), "yaw {deg}");
        }
        let r = render_view(&mpi, &reference.with_pose(Pose::from_yaw_pitch(20f64.to_radians(), 0.0)), None).unwrap();
        assert!(r.opacity.iter().any(|&a| a < 0.99));
        assert!(r.out_of_frustum > 0);
    }

    fn random_setup(seed: u64) -> (MpiVolume, CameraModel, BilateralKernel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Intrinsics::centered(12, 10, 50f64.to_radians()).unwrap();
        let mut mpi = MpiVolume::new(
            CameraModel::at_origin(k),
            3,
            ExpansionSpec::from_factor(&k, 1.3).unwrap(),
            (2.0, 4.0),
            PlaneSpacing::Depth,
        )
        .unwrap();
        for t in mpi.texels.chunks_exact_mut(CHANNELS) {
            t[0] = rng.gen();
            t[1] = rng.gen();
            t[2] = rng.gen();
            t[3] = rng.gen_range(0.1..2.0);
        }
        let pose = Pose::new(
            Pose::from_yaw_pitch(0.05, -0.03).rotation,
            nalgebra::Vector3::new(0.05, -0.02, 0.1),
        )
        .unwrap();
        let mut kernel = BilateralKernel::gaussian(3, 1.0, 0.3).unwrap();
        for w in &mut kernel.spatial_weights {
            *w *= rng.gen_range(0.5..1.5);
        }
        (mpi.clone(), mpi.reference().with_pose(pose), kernel)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (mpi, target, kernel) = random_setup(3);
        let geom = ViewGeometry::new(&mpi, &target).unwrap();
        let texels: Vec<f64> = mpi.texels.iter().map(|&v| v as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let probe: Vec<f64> = (0..geom.pixels() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |tx: &[f64], wts: &[f64]| -> f64 {
            let f = FilterParams { size: 3, weights: wts, sigma_r: kernel.sigma_r };
            forward(tx, &geom, Some(f)).output.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let params = FilterParams { size: 3, weights: &kernel.spatial_weights, sigma_r: kernel.sigma_r };
        let tape = forward(&texels, &geom, Some(params));
        let mut d_tex = vec![0.0; texels.len()];
        let d_w = backward(&geom, Some(params), &tape, &probe, &mut d_tex);
        let e = 1e-6;
        for _ in 0..60 {
            let i = rng.gen_range(0..texels.len());
            let (mut a, mut b) = (texels.clone(), texels.clone());
            a[i] += e;
            b[i] -= e;
            let num = (loss(&a, &kernel.spatial_weights) - loss(&b, &kernel.spatial_weights)) / (2.0 * e);
            assert!((num - d_tex[i]).abs() < 1e-6 * (1.0 + num.abs()), "texel {i}: {num} vs {}", d_tex[i]);
        }
        for i in 0..9 {
            let (mut a, mut b) = (kernel.spatial_weights.clone(), kernel.spatial_weights.clone());
            a[i] += e;
            b[i] -= e;
            let num = (loss(&texels, &a) - loss(&texels, &b)) / (2.0 * e);
            assert!((num - d_w[i]).abs() < 1e-6 * (1.0 + num.abs()), "weight {i}: {num} vs {}", d_w[i]);
        }
    }

    #[test]
    fn rendering_is_deterministic_across_thread_counts() {
        let (mpi, target, kernel) = random_setup(5);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let geom = ViewGeometry::new(&mpi, &target).unwrap();
                    let tx: Vec<f64> = mpi.texels.iter().map(|&v| v as f64).collect();
                    let f = FilterParams { size: 3, weights: &kernel.spatial_weights, sigma_r: kernel.sigma_r };
                    let tape = forward(&tx, &geom, Some(f));
                    let ones = vec![1.0; tape.output.len()];
                    let mut d = vec![0.0; tx.len()];
                    let dw = backward(&geom, Some(f), &tape, &ones, &mut d);
                    (tape.output, d, dw)
                })
        };
        assert_eq!(run(1), run(4));
    }
}
