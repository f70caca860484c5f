//! Bilateral ray aggregation with a trainable spatial kernel.
//!
//! ```text
//! out(p) = 1/W_p * sum_{q in S} G_s(q - p) * G_r(|l(p) - l(q)|) * I(q)
//! W_p    = sum_{q in S} G_s(q - p) * G_r(|l(p) - l(q)|)
//! G_r(x) = exp(-x^2 / (2 sigma_r^2))
//! ```
//!
//! `G_s` is a free `K x K` weight table (initialized to a Gaussian). The
//! range term uses the luma `l` of the input, one weight shared by the three
//! channels. Borders are reflected without repeating the edge pixel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{RgbImage, LUMA_WEIGHTS};
use crate::real::Real;

pub const DEFAULT_KERNEL_SIZE: usize = 5;
pub const DEFAULT_SIGMA_S: f64 = 1.5;
pub const DEFAULT_SIGMA_R: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilateralKernel {
    pub size: usize,
    /// Row-major `size x size` spatial weights.
    pub spatial_weights: Vec<f64>,
    /// Range kernel width in intensity units; fixed during training.
    pub sigma_r: f64,
    /// Spatial width used to initialize the weights.
    pub sigma_s: f64,
}

impl Default for BilateralKernel {
    fn default() -> Self {
        Self::gaussian(DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA_S, DEFAULT_SIGMA_R).expect("default kernel is valid")
    }
}

impl BilateralKernel {
    /// Unnormalized Gaussian spatial weights `exp(-r^2 / (2 sigma_s^2))`.
    pub fn gaussian(size: usize, sigma_s: f64, sigma_r: f64) -> Result<Self> {
        let r = (size / 2) as f64;
        let mut spatial_weights = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let (dy, dx) = (i as f64 - r, j as f64 - r);
                spatial_weights.push((-(dx * dx + dy * dy) / (2.0 * sigma_s * sigma_s)).exp());
            }
        }
        let k = Self {
            size,
            spatial_weights,
            sigma_r,
            sigma_s,
        };
        k.validate()?;
        Ok(k)
    }

    /// Weight 1 at the center, 0 elsewhere: the identity filter.
    pub fn impulse(size: usize, sigma_r: f64) -> Result<Self> {
        let mut spatial_weights = vec![0.0; size * size];
        spatial_weights[size * size / 2] = 1.0;
        let k = Self {
            size,
            spatial_weights,
            sigma_r,
            sigma_s: 0.0,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.size % 2 == 0 {
            return Err(Error::Domain(format!("kernel size {} must be odd", self.size)));
        }
        if self.spatial_weights.len() != self.size * self.size {
            return Err(Error::Dimension(format!(
                "kernel has {} weights, expected {}",
                self.spatial_weights.len(),
                self.size * self.size
            )));
        }
        if !(self.sigma_r > 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::Domain(format!("range width {} must be positive", self.sigma_r)));
        }
        if self.spatial_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("spatial weights must be finite".into()));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

#[inline]
fn luma<F: Real>(px: &[F]) -> F {
    F::lit(LUMA_WEIGHTS[0]) * px[0] + F::lit(LUMA_WEIGHTS[1]) * px[1] + F::lit(LUMA_WEIGHTS[2]) * px[2]
}

fn check_size(width: usize, height: usize, size: usize) -> Result<()> {
    if size > width.min(height) {
        return Err(Error::Dimension(format!(
            "kernel size {size} exceeds image size {width}x{height}"
        )));
    }
    Ok(())
}

/// Filter an interleaved RGB buffer.
pub(crate) fn filter_forward<F: Real>(
    rgb: &[F],
    width: usize,
    height: usize,
    size: usize,
    weights: &[F],
    sigma_r: f64,
) -> Vec<F> {
    let r = (size / 2) as isize;
    let inv = F::lit(1.0 / (2.0 * sigma_r * sigma_r));
    let lum: Vec<F> = rgb.chunks_exact(3).map(luma).collect();
    let mut out = vec![F::zero(); rgb.len()];
    out.par_chunks_mut(width * 3).enumerate().for_each(|(y, row)| {
        for x in 0..width {
            let p = y * width + x;
            let lp = lum[p];
            let mut num = [F::zero(); 3];
            let mut den = F::zero();
            for dy in -r..=r {
                let qy = reflect(y as isize + dy, height);
                for dx in -r..=r {
                    let qx = reflect(x as isize + dx, width);
                    let q = qy * width + qx;
                    let ws = weights[((dy + r) as usize) * size + (dx + r) as usize];
                    let d = lp - lum[q];
                    let a = ws * (-(d * d) * inv).exp();
                    den += a;
                    for c in 0..3 {
                        num[c] += a * rgb[q * 3 + c];
                    }
                }
            }
            for c in 0..3 {
                row[x * 3 + c] = if den > F::zero() { num[c] / den } else { rgb[p * 3 + c] };
            }
        }
    });
    out
}

const BACKWARD_ROWS: usize = 16;

/// Adjoint of [`filter_forward`]. Returns `(dL/d input, dL/d weights)`.
///
/// Rows are processed in fixed blocks whose partial results are summed in
/// block order, so the output is independent of the thread count.
pub(crate) fn filter_backward<F: Real>(
    rgb: &[F],
    width: usize,
    height: usize,
    size: usize,
    weights: &[F],
    sigma_r: f64,
    out: &[F],
    d_out: &[F],
) -> (Vec<F>, Vec<F>) {
    let r = (size / 2) as isize;
    let inv = F::lit(1.0 / (2.0 * sigma_r * sigma_r));
    let inv_var = F::lit(1.0 / (sigma_r * sigma_r));
    let lum: Vec<F> = rgb.chunks_exact(3).map(luma).collect();
    let n = width * height;
    let blocks: Vec<(Vec<F>, Vec<F>, Vec<F>)> = (0..height.div_ceil(BACKWARD_ROWS))
        .into_par_iter()
        .map(|b| {
            let mut d_in = vec![F::zero(); n * 3];
            let mut d_lum = vec![F::zero(); n];
            let mut d_w = vec![F::zero(); size * size];
            // (neighbour index, range weight) for the current pixel
            let mut nb: Vec<(usize, F)> = Vec::with_capacity(size * size);
            for y in b * BACKWARD_ROWS..((b + 1) * BACKWARD_ROWS).min(height) {
                for x in 0..width {
                    let p = y * width + x;
                    let g = [d_out[p * 3], d_out[p * 3 + 1], d_out[p * 3 + 2]];
                    if g.iter().all(|v| *v == F::zero()) {
                        continue;
                    }
                    let lp = lum[p];
                    let mut den = F::zero();
                    nb.clear();
                    for dy in -r..=r {
                        let qy = reflect(y as isize + dy, height);
                        for dx in -r..=r {
                            let q = qy * width + reflect(x as isize + dx, width);
                            let d = lp - lum[q];
                            let gr = (-(d * d) * inv).exp();
                            den += weights[nb.len()] * gr;
                            nb.push((q, gr));
                        }
                    }
                    if !(den > F::zero()) {
                        // pass-through branch of the forward pass
                        for c in 0..3 {
                            d_in[p * 3 + c] += g[c];
                        }
                        continue;
                    }
                    let inv_den = F::one() / den;
                    let o = [out[p * 3], out[p * 3 + 1], out[p * 3 + 2]];
                    for (wi, &(q, gr)) in nb.iter().enumerate() {
                        let ws = weights[wi];
                        let a = ws * gr * inv_den;
                        // dL/da_pq
                        let mut da = F::zero();
                        for c in 0..3 {
                            da += g[c] * (rgb[q * 3 + c] - o[c]);
                            d_in[q * 3 + c] += g[c] * a;
                        }
                        da *= inv_den;
                        d_w[wi] += da * gr;
                        // dG_r/dl_p = -G_r * d / sigma_r^2
                        let d = lp - lum[q];
                        let dl = da * ws * gr * (-d * inv_var);
                        d_lum[p] += dl;
                        d_lum[q] -= dl;
                    }
                }
            }
            (d_in, d_lum, d_w)
        })
        .collect();

    let mut d_in = vec![F::zero(); n * 3];
    let mut d_lum = vec![F::zero(); n];
    let mut d_w = vec![F::zero(); size * size];
    for (bi, bl, bw) in blocks {
        for (a, b) in d_in.iter_mut().zip(bi) {
            *a += b;
        }
        for (a, b) in d_lum.iter_mut().zip(bl) {
            *a += b;
        }
        for (a, b) in d_w.iter_mut().zip(bw) {
            *a += b;
        }
    }
    for p in 0..n {
        for c in 0..3 {
            d_in[p * 3 + c] += F::lit(LUMA_WEIGHTS[c]) * d_lum[p];
        }
    }
    (d_in, d_w)
}

/// Apply the bilateral filter to an image.
pub fn bilateral_filter(image: &RgbImage, kernel: &BilateralKernel) -> Result<RgbImage> {
    kernel.validate()?;
    check_size(image.width(), image.height(), kernel.size)?;
    let rgb: Vec<f64> = image.as_slice().iter().map(|&v| v as f64).collect();
    let out = filter_forward(
        &rgb,
        image.width(),
        image.height(),
        kernel.size,
        &kernel.spatial_weights,
        kernel.sigma_r,
    );
    RgbImage::from_vec(image.width(), image.height(), out.into_iter().map(|v| v as f32).collect())
}

pub(crate) fn validate_for(kernel: &BilateralKernel, width: usize, height: usize) -> Result<()> {
    kernel.validate()?;
    check_size(width, height, kernel.size)
}
