//! Finite-difference check of the analytic gradient.
//!
//! The numeric side always evaluates the loss in `f64` with central
//! differences; the analytic side runs in the requested precision.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, ExpansionSpec, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::image::{DepthRaster, Mask, RgbImage};
use crate::mpi::filter::BilateralKernel;
use crate::mpi::render::FilterParams;
use crate::mpi::volume::CHANNELS;
use crate::mpi::{FreezeMask, MpiVolume, PlaneSpacing};
use crate::pseudo::PseudoView;
use crate::real::Precision;

use super::backward::{backward, view_loss, GradientBuffer, PreparedView};
use super::loss::LossMode;
use super::optimizer::OptimizeConfig;

pub const TOLERANCE_F64: f64 = 1e-3;
pub const TOLERANCE_F32: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub planes: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub precision: Precision,
    pub probes: usize,
    /// Central-difference step.
    pub step: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            planes: 4,
            width: 16,
            height: 16,
            seed: 0,
            precision: Precision::F64,
            probes: 200,
            step: 1e-4,
        }
    }
}

impl GradcheckConfig {
    pub fn tolerance(&self) -> f64 {
        match self.precision {
            Precision::F64 => TOLERANCE_F64,
            Precision::F32 => TOLERANCE_F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.planes) {
            return Err(Error::Domain(format!("gradcheck supports 2 to 8 planes, got {}", self.planes)));
        }
        if !(11..=32).contains(&self.width) || !(11..=32).contains(&self.height) {
            return Err(Error::Domain(format!(
                "gradcheck supports 11x11 to 32x32 images, got {}x{}",
                self.width, self.height
            )));
        }
        if self.probes == 0 || !(self.step > 0.0) {
            return Err(Error::Domain("need at least one probe and a positive step".into()));
        }
        Ok(())
    }
}

/// A random differentiable instance: volume, kernel, one supervision view
/// and the loss settings.
#[derive(Debug, Clone)]
pub struct GradcheckProblem {
    pub mpi: MpiVolume,
    pub freeze: FreezeMask,
    pub kernel: BilateralKernel,
    pub view: PseudoView,
    pub config: OptimizeConfig,
}

impl GradcheckProblem {
    /// Random texels (sigma in `(0.1, 3)`), positive filter weights, a
    /// slightly displaced target camera and a random target image. The loss
    /// combines L1 and the structural term so every adjoint is exercised.
    pub fn random(config: &GradcheckConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = Intrinsics::centered(config.width, config.height, 50f64.to_radians())?;
        let reference = CameraModel::at_origin(k);
        let mut mpi = MpiVolume::new(
            reference,
            config.planes,
            ExpansionSpec::none(&k),
            (1.5, 4.0),
            PlaneSpacing::Depth,
        )?;
        for t in mpi.texels.chunks_exact_mut(CHANNELS) {
            t.copy_from_slice(&[rng.gen(), rng.gen(), rng.gen(), rng.gen_range(0.1..3.0)]);
        }
        let mut kernel = BilateralKernel::default();
        for w in &mut kernel.spatial_weights {
            *w *= rng.gen_range(0.5..1.5);
        }
        let pose = Pose::new(
            Pose::from_yaw_pitch(rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03)).rotation,
            Vector3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)),
        )?;
        let (w, h) = (config.width, config.height);
        let view = PseudoView {
            camera: reference.with_pose(pose),
            rgb: RgbImage::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()]),
            depth: DepthRaster::constant(w, h, 2.0)?,
            inpaint_mask: Mask::new(w, h, false),
        };
        Ok(Self {
            freeze: FreezeMask::for_volume(&mpi),
            mpi,
            kernel,
            view,
            config: OptimizeConfig {
                loss_mode: LossMode::L1PlusDssim,
                dssim_weight: 0.5,
                filter_enabled: true,
                precision: config.precision,
                ..Default::default()
            },
        })
    }

    /// The library's analytic gradient.
    pub fn analytic_gradient(&self) -> Result<GradientBuffer> {
        Ok(backward(&self.mpi, &self.freeze, &self.kernel, &self.view, &self.config)?.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterKind {
    Rgb,
    Sigma,
    FilterWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub kind: ParameterKind,
    /// Index into the texel array or the filter weight table.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub planes: usize,
    pub width: usize,
    pub height: usize,
    pub precision: Precision,
    pub step: f64,
    pub tolerance: f64,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub probes: Vec<ProbeResult>,
}

/// Check the library adjoint on a random instance.
pub fn gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    gradcheck_with(config, GradcheckProblem::analytic_gradient)
}

/// Check an arbitrary gradient provider against central differences.
pub fn gradcheck_with(
    config: &GradcheckConfig,
    gradient: impl Fn(&GradcheckProblem) -> Result<GradientBuffer>,
) -> Result<GradcheckReport> {
    let problem = GradcheckProblem::random(config)?;
    let analytic = gradient(&problem)?;
    if analytic.texels.len() != problem.mpi.texels.len() || analytic.filter.len() != problem.kernel.spatial_weights.len() {
        return Err(Error::Dimension("gradient buffer does not match the problem".into()));
    }

    let prepared = PreparedView::<f64>::new(&problem.mpi, &problem.view)?;
    let texels: Vec<f64> = problem.mpi.texels.iter().map(|&v| v as f64).collect();
    let weights = problem.kernel.spatial_weights.clone();
    let loss = |tx: &[f64], wt: &[f64]| {
        let f = FilterParams {
            size: problem.kernel.size,
            weights: wt,
            sigma_r: problem.kernel.sigma_r,
        };
        view_loss(tx, Some(f), &prepared, &problem.config)
    };

    // All filter weights, then texel channels split between colour and density.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let n_filter = weights.len().min(config.probes);
    let n_texel = config.probes - n_filter;
    let mut picks: Vec<(ParameterKind, usize)> = (0..n_filter).map(|i| (ParameterKind::FilterWeight, i)).collect();
    let texel_count = texels.len() / CHANNELS;
    for j in 0..n_texel {
        let t = rng.gen_range(0..texel_count);
        if j % 2 == 0 {
            picks.push((ParameterKind::Rgb, t * CHANNELS + rng.gen_range(0..3)));
        } else {
            picks.push((ParameterKind::Sigma, t * CHANNELS + 3));
        }
    }

    let h = config.step;
    let mut probes = Vec::with_capacity(picks.len());
    for (kind, index) in picks {
        let (numeric, value) = match kind {
            ParameterKind::FilterWeight => {
                let (mut a, mut b) = (weights.clone(), weights.clone());
                a[index] += h;
                b[index] -= h;
                ((loss(&texels, &a) - loss(&texels, &b)) / (2.0 * h), analytic.filter[index])
            }
            _ => {
                let (mut a, mut b) = (texels.clone(), texels.clone());
                a[index] += h;
                b[index] -= h;
                ((loss(&a, &weights) - loss(&b, &weights)) / (2.0 * h), analytic.texels[index])
            }
        };
        let abs_error = (value - numeric).abs();
        let rel_error = abs_error / value.abs().max(numeric.abs()).max(1e-8);
        probes.push(ProbeResult {
            kind,
            index,
            analytic: value,
            numeric,
            abs_error,
            rel_error,
        });
    }
    let max_abs_error = probes.iter().map(|p| p.abs_error).fold(0.0, f64::max);
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    let tolerance = config.tolerance();
    Ok(GradcheckReport {
        planes: config.planes,
        width: config.width,
        height: config.height,
        precision: config.precision,
        step: h,
        tolerance,
        max_abs_error,
        max_rel_error,
        passed: max_rel_error < tolerance,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_f64_passes() {
        let r = gradcheck(&GradcheckConfig::default()).unwrap();
        assert!(r.passed, "max rel error {}", r.max_rel_error);
        assert_eq!(r.probes.len(), 200);
        for kind in [ParameterKind::Rgb, ParameterKind::Sigma, ParameterKind::FilterWeight] {
            assert!(r.probes.iter().any(|p| p.kind == kind && p.analytic != 0.0));
        }
    }

    #[test]
    fn f32_reports_the_looser_tolerance() {
        let r = gradcheck(&GradcheckConfig { precision: Precision::F32, ..Default::default() }).unwrap();
        assert_eq!(r.tolerance, TOLERANCE_F32);
        assert!(r.passed, "max rel error {}", r.max_rel_error);
    }

    #[test]
    fn corrupted_adjoint_fails() {
        let r = gradcheck_with(&GradcheckConfig::default(), |p| {
            let mut g = p.analytic_gradient()?;
            for t in g.texels.chunks_exact_mut(CHANNELS) {
                t[3] *= 1.05;
            }
            Ok(g)
        })
        .unwrap();
        assert!(!r.passed);
        assert!(r.probes.iter().filter(|p| p.rel_error >= TOLERANCE_F64).all(|p| p.kind == ParameterKind::Sigma));
    }

    #[test]
    fn rejects_oversized_problems() {
        assert!(gradcheck(&GradcheckConfig { planes: 9, ..Default::default() }).is_err());
        assert!(gradcheck(&GradcheckConfig { width: 40, ..Default::default() }).is_err());
    }
}
