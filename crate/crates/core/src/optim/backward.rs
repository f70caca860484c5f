//! Analytic gradient of the view loss with respect to texels and filter
//! weights: loss -> filter -> compositing -> bilinear gather -> texels.

use crate::error::{Error, Result};
use crate::mpi::filter::{validate_for, BilateralKernel};
use crate::mpi::render::{backward as render_backward, forward as render_forward, FilterParams, ViewGeometry};
use crate::mpi::volume::CHANNELS;
use crate::mpi::{FreezeMask, MpiVolume};
use crate::pseudo::PseudoView;
use crate::real::{Precision, Real};

use super::loss::{check_mode, loss_and_grad};
use super::optimizer::OptimizeConfig;

/// Gradient storage: one slot per texel channel (same layout as
/// [`MpiVolume::texels`]) plus one per spatial filter weight.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer<F = f64> {
    pub texels: Vec<F>,
    pub filter: Vec<F>,
}

impl<F: Real> GradientBuffer<F> {
    pub fn zeros(texels: usize, filter: usize) -> Self {
        Self {
            texels: vec![F::zero(); texels],
            filter: vec![F::zero(); filter],
        }
    }

    pub fn clear(&mut self) {
        self.texels.fill(F::zero());
        self.filter.fill(F::zero());
    }

    /// Force the gradient of every frozen texel channel to zero.
    pub fn zero_frozen(&mut self, freeze: &FreezeMask) {
        for (i, t) in self.texels.chunks_exact_mut(CHANNELS).enumerate() {
            if freeze.is_frozen(i) {
                t.fill(F::zero());
            }
        }
    }

    pub(crate) fn as_f64_buffer(&self) -> GradientBuffer<f64> {
        GradientBuffer {
            texels: self.texels.iter().map(|v| v.as_f64()).collect(),
            filter: self.filter.iter().map(|v| v.as_f64()).collect(),
        }
    }
}

/// A supervision view prepared for repeated evaluation.
pub(crate) struct PreparedView<F> {
    pub geom: ViewGeometry,
    pub target: Vec<F>,
}

impl<F: Real> PreparedView<F> {
    pub fn new(mpi: &MpiVolume, view: &PseudoView) -> Result<Self> {
        view.validate()?;
        Ok(Self {
            geom: ViewGeometry::new(mpi, &view.camera)?,
            target: view.rgb.as_slice().iter().map(|&v| F::lit(v as f64)).collect(),
        })
    }
}

/// Loss of one view; accumulates its gradient into `grad`.
pub(crate) fn accumulate_view<F: Real>(
    texels: &[F],
    filter: Option<FilterParams<'_, F>>,
    view: &PreparedView<F>,
    config: &OptimizeConfig,
    grad: &mut GradientBuffer<F>,
) -> F {
    let tape = render_forward(texels, &view.geom, filter);
    let (loss, d_out) = loss_and_grad(
        &tape.output,
        &view.target,
        view.geom.width(),
        view.geom.height(),
        config.loss_mode,
        config.dssim_weight,
    );
    let d_w = render_backward(&view.geom, filter, &tape, &d_out, &mut grad.texels);
    for (g, d) in grad.filter.iter_mut().zip(d_w) {
        *g += d;
    }
    loss
}

/// Loss value only.
pub(crate) fn view_loss<F: Real>(
    texels: &[F],
    filter: Option<FilterParams<'_, F>>,
    view: &PreparedView<F>,
    config: &OptimizeConfig,
) -> F {
    let tape = render_forward(texels, &view.geom, filter);
    loss_and_grad(
        &tape.output,
        &view.target,
        view.geom.width(),
        view.geom.height(),
        config.loss_mode,
        config.dssim_weight,
    )
    .0
}

pub(crate) fn check_view(mpi: &MpiVolume, kernel: &BilateralKernel, view: &PseudoView, config: &OptimizeConfig) -> Result<()> {
    view.validate()?;
    let (w, h) = (view.camera.width(), view.camera.height());
    if config.filter_enabled {
        validate_for(kernel, w, h)?;
    }
    check_mode(config.loss_mode, w, h)?;
    if mpi.planes() == 0 {
        return Err(Error::Degenerate("volume has no planes".into()));
    }
    Ok(())
}

fn run<F: Real>(
    mpi: &MpiVolume,
    freeze: &FreezeMask,
    kernel: &BilateralKernel,
    view: &PseudoView,
    config: &OptimizeConfig,
) -> Result<(f64, GradientBuffer)> {
    let texels: Vec<F> = mpi.texels.iter().map(|&v| F::lit(v as f64)).collect();
    let weights: Vec<F> = kernel.spatial_weights.iter().map(|&v| F::lit(v)).collect();
    let filter = config.filter_enabled.then_some(FilterParams {
        size: kernel.size,
        weights: &weights,
        sigma_r: kernel.sigma_r,
    });
    let prepared = PreparedView::<F>::new(mpi, view)?;
    let mut grad = GradientBuffer::zeros(texels.len(), if config.filter_enabled { weights.len() } else { 0 });
    let loss = accumulate_view(&texels, filter, &prepared, config, &mut grad);
    grad.zero_frozen(freeze);
    Ok((loss.as_f64(), grad.as_f64_buffer()))
}

/// Loss of `view` and its gradient in `config.precision`. Frozen texels get
/// exactly zero gradient; the filter slots are empty when the filter is
/// disabled.
pub fn backward(
    mpi: &MpiVolume,
    freeze: &FreezeMask,
    kernel: &BilateralKernel,
    view: &PseudoView,
    config: &OptimizeConfig,
) -> Result<(f64, GradientBuffer)> {
    if !freeze.matches(mpi) {
        return Err(Error::Dimension("freeze mask does not match the volume".into()));
    }
    check_view(mpi, kernel, view, config)?;
    match config.precision {
        Precision::F32 => run::<f32>(mpi, freeze, kernel, view, config),
        Precision::F64 => run::<f64>(mpi, freeze, kernel, view, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraModel, ExpansionSpec, Intrinsics, Pose};
    use crate::image::{DepthRaster, Mask, RgbImage};
    use crate::mpi::PlaneSpacing;
    use crate::optim::LossMode;

    fn setup() -> (MpiVolume, PseudoView) {
        let k = Intrinsics::centered(12, 12, 0.9).unwrap();
        let cam = CameraModel::at_origin(k);
        let mpi = MpiVolume::new(cam, 3, ExpansionSpec::from_factor(&k, 1.2).unwrap(), (1.0, 3.0), PlaneSpacing::Depth).unwrap();
        let view = PseudoView {
            camera: cam.with_pose(Pose::from_yaw_pitch(0.02, 0.01)),
            rgb: RgbImage::new(12, 12),
            depth: DepthRaster::constant(12, 12, 2.0).unwrap(),
            inpaint_mask: Mask::new(12, 12, false),
        };
        (mpi, view)
    }

    #[test]
    fn zero_density_blocks_color_gradient() {
        let (mpi, view) = setup();
        let config = OptimizeConfig { filter_enabled: false, ..Default::default() };
        let (loss, g) = backward(&mpi, &FreezeMask::for_volume(&mpi), &BilateralKernel::default(), &view, &config).unwrap();
        assert_eq!(loss, 0.0);
        for t in g.texels.chunks_exact(4) {
            assert_eq!(&t[..3], &[0.0; 3]);
        }
    }

    #[test]
    fn frozen_texels_have_zero_gradient() {
        let (mut mpi, mut view) = setup();
        view.rgb = RgbImage::filled(12, 12, [0.9, 0.2, 0.4]);
        for t in mpi.texels.chunks_exact_mut(4) {
            t[3] = 0.7;
        }
        let mut freeze = FreezeMask::for_volume(&mpi);
        for y in 0..mpi.height() {
            for x in 0..mpi.width() / 2 {
                freeze.set(1, x, y, true);
            }
        }
        for precision in [Precision::F32, Precision::F64] {
            let config = OptimizeConfig { precision, loss_mode: LossMode::L1PlusDssim, dssim_weight: 0.3, ..Default::default() };
            let (_, g) = backward(&mpi, &freeze, &BilateralKernel::default(), &view, &config).unwrap();
            let mut live = 0;
            for (i, t) in g.texels.chunks_exact(4).enumerate() {
                if freeze.is_frozen(i) {
                    assert!(t.iter().all(|&v| v == 0.0));
                } else if t.iter().any(|&v| v != 0.0) {
                    live += 1;
                }
            }
            assert!(live > 0);
            assert_eq!(g.filter.len(), 25);
        }
    }
}
