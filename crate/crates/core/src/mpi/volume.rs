use crate::camera::{CameraModel, ExpansionSpec, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::image::{DepthRaster, RgbImage};

/// Channels per texel: r, g, b, sigma.
pub const CHANNELS: usize = 4;

/// Density given to texels initialized from the source image, in units of
/// `1 / delta`: `alpha = 1 - exp(-20) ≈ 1 - 2e-9`.
pub const OPAQUE_SIGMA_DELTA: f64 = 20.0;

/// Gray used for trainable texels at initialization.
pub const UNOCCUPIED_RGB: f32 = 0.5;

/// How plane depths are distributed between the near and far bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlaneSpacing {
    /// Constant depth step.
    #[default]
    Depth,
    /// Constant step in inverse depth.
    Disparity,
}

pub fn plane_depths(near: f64, far: f64, planes: usize, spacing: PlaneSpacing) -> Vec<f64> {
    let last = (planes - 1) as f64;
    (0..planes)
        .map(|k| {
            let t = k as f64 / last;
            match spacing {
                PlaneSpacing::Depth => near + (far - near) * t,
                PlaneSpacing::Disparity => 1.0 / (1.0 / near + (1.0 / far - 1.0 / near) * t),
            }
        })
        .collect()
}

/// Expanded multiplane image: `planes x height x width` texels holding
/// `(r, g, b, sigma)`, ordered near to far, plane-major then row-major.
///
/// The planes are fronto-parallel in the reference camera. The source image
/// occupies a centered `source_width x source_height` window of every plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MpiVolume {
    planes: usize,
    width: usize,
    height: usize,
    pub texels: Vec<f32>,
    reference: CameraModel,
    expansion: ExpansionSpec,
    near: f32,
    far: f32,
    spacing: PlaneSpacing,
    depths: Vec<f64>,
}

impl MpiVolume {
    /// Empty volume (every texel `rgb = 0.5, sigma = 0`) sized from the
    /// reference camera and expansion.
    ///
    /// The intrinsics, expansion factor and depth bounds are rounded to
    /// `f32`, the precision of the on-disk container, so a saved volume
    /// reloads bit-identically.
    pub fn new(
        reference: CameraModel,
        planes: usize,
        expansion: ExpansionSpec,
        depth_range: (f32, f32),
        spacing: PlaneSpacing,
    ) -> Result<Self> {
        reference.intrinsics.validate()?;
        reference.pose.validate()?;
        let k = reference.intrinsics;
        let reference = CameraModel {
            intrinsics: Intrinsics {
                fx: k.fx as f32 as f64,
                fy: k.fy as f32 as f64,
                cx: k.cx as f32 as f64,
                cy: k.cy as f32 as f64,
                ..k
            },
            pose: reference.pose,
        };
        if planes < 2 {
            return Err(Error::Domain(format!("need at least 2 planes, got {planes}")));
        }
        let (near, far) = depth_range;
        if !(near > 0.0 && far > near && far.is_finite()) {
            return Err(Error::Domain(format!("invalid depth range [{near}, {far}]")));
        }
        let expansion = ExpansionSpec::from_factor(&reference.intrinsics, expansion.a as f32 as f64)?;
        let (width, height) = expansion.plane_size(&reference.intrinsics);
        let mut texels = vec![0.0f32; planes * width * height * CHANNELS];
        for t in texels.chunks_exact_mut(CHANNELS) {
            t[..3].fill(UNOCCUPIED_RGB);
        }
        Ok(Self {
            planes,
            width,
            height,
            texels,
            reference,
            expansion,
            near,
            far,
            spacing,
            depths: plane_depths(near as f64, far as f64, planes, spacing),
        })
    }

    /// Reassemble a volume from stored parts (used by the container reader).
    pub(crate) fn from_parts(
        reference: CameraModel,
        planes: usize,
        width: usize,
        height: usize,
        expansion_a: f32,
        depth_range: (f32, f32),
        spacing: PlaneSpacing,
        texels: Vec<f32>,
    ) -> Result<Self> {
        let mut v = Self::new(
            reference,
            planes,
            ExpansionSpec::from_factor(&reference.intrinsics, expansion_a as f64)?,
            depth_range,
            spacing,
        )?;
        if (v.width, v.height) != (width, height) {
            return Err(Error::Dimension(format!(
                "stored plane size {width}x{height} disagrees with expansion {} of a {}x{} source ({}x{})",
                expansion_a,
                reference.intrinsics.width,
                reference.intrinsics.height,
                v.width,
                v.height
            )));
        }
        if texels.len() != v.texels.len() {
            return Err(Error::Dimension(format!(
                "texel payload has {} values, expected {}",
                texels.len(),
                v.texels.len()
            )));
        }
        v.texels = texels;
        Ok(v)
    }

    #[inline]
    pub fn planes(&self) -> usize {
        self.planes
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn reference(&self) -> &CameraModel {
        &self.reference
    }

    pub fn expansion(&self) -> &ExpansionSpec {
        &self.expansion
    }

    pub fn depth_range(&self) -> (f32, f32) {
        (self.near, self.far)
    }

    pub fn spacing(&self) -> PlaneSpacing {
        self.spacing
    }

    /// Plane depths, near to far.
    pub fn plane_depths(&self) -> &[f64] {
        &self.depths
    }

    /// Constant inter-plane spacing for depth-spaced volumes; the mean
    /// spacing otherwise.
    pub fn delta(&self) -> f64 {
        (self.far as f64 - self.near as f64) / (self.planes - 1) as f64
    }

    /// Per-plane bin widths used by compositing. Constant for depth spacing;
    /// for disparity spacing plane `k` uses `d[k+1] - d[k]` and the last
    /// plane repeats the previous width.
    pub fn deltas(&self) -> Vec<f64> {
        match self.spacing {
            PlaneSpacing::Depth => vec![self.delta(); self.planes],
            PlaneSpacing::Disparity => (0..self.planes)
                .map(|k| {
                    let k = k.min(self.planes - 2);
                    self.depths[k + 1] - self.depths[k]
                })
                .collect(),
        }
    }

    /// Integer offset of the source window inside each plane.
    pub fn source_offset(&self) -> (usize, usize) {
        let k = &self.reference.intrinsics;
        ((self.width - k.width) / 2, (self.height - k.height) / 2)
    }

    /// Intrinsics of the expanded plane grid: same focal lengths as the
    /// reference camera, principal point shifted by the source offset.
    pub fn plane_intrinsics(&self) -> Intrinsics {
        let k = &self.reference.intrinsics;
        let (ox, oy) = self.source_offset();
        Intrinsics {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx + ox as f64,
            cy: k.cy + oy as f64,
            width: self.width,
            height: self.height,
        }
    }

    #[inline]
    pub fn texel_index(&self, plane: usize, x: usize, y: usize) -> usize {
        ((plane * self.height + y) * self.width + x) * CHANNELS
    }

    pub fn texel(&self, plane: usize, x: usize, y: usize) -> [f32; 4] {
        let i = self.texel_index(plane, x, y);
        [self.texels[i], self.texels[i + 1], self.texels[i + 2], self.texels[i + 3]]
    }

    pub fn set_texel(&mut self, plane: usize, x: usize, y: usize, v: [f32; 4]) {
        let i = self.texel_index(plane, x, y);
        self.texels[i..i + CHANNELS].copy_from_slice(&v);
    }

    pub fn plane(&self, k: usize) -> &[f32] {
        let n = self.plane_len() * CHANNELS;
        &self.texels[k * n..(k + 1) * n]
    }

    /// Index of the plane nearest in depth to `d`, clamped to the stack.
    pub fn nearest_plane(&self, d: f64) -> usize {
        let i = self.depths.partition_point(|&p| p < d);
        if i == 0 {
            0
        } else if i == self.planes {
            self.planes - 1
        } else if d - self.depths[i - 1] <= self.depths[i] - d {
            i - 1
        } else {
            i
        }
    }

    /// Clamp every texel to `rgb in [0, 1]`, `sigma >= 0`.
    pub fn clamp(&mut self) {
        for t in self.texels.chunks_exact_mut(CHANNELS) {
            for c in &mut t[..3] {
                *c = c.clamp(0.0, 1.0);
            }
            t[3] = t[3].max(0.0);
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        for w in self.depths.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain("plane depths are not strictly increasing".into()));
            }
        }
        if let Some(i) = self
            .texels
            .chunks_exact(CHANNELS)
            .position(|t| t.iter().any(|v| !v.is_finite()) || t[3] < 0.0)
        {
            return Err(Error::Domain(format!("texel {i} is non-finite or has negative density")));
        }
        Ok(())
    }
}

/// Texels initialized from source pixels; they never change afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    planes: usize,
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl FreezeMask {
    pub fn empty(planes: usize, width: usize, height: usize) -> Self {
        Self {
            planes,
            width,
            height,
            bits: vec![false; planes * width * height],
        }
    }

    pub fn for_volume(mpi: &MpiVolume) -> Self {
        Self::empty(mpi.planes(), mpi.width(), mpi.height())
    }

    pub fn from_bits(planes: usize, width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != planes * width * height {
            return Err(Error::Dimension(format!(
                "freeze mask has {} entries, expected {}",
                bits.len(),
                planes * width * height
            )));
        }
        Ok(Self {
            planes,
            width,
            height,
            bits,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.planes, self.width, self.height)
    }

    pub fn matches(&self, mpi: &MpiVolume) -> bool {
        self.dims() == (mpi.planes(), mpi.width(), mpi.height())
    }

    #[inline]
    pub fn get(&self, plane: usize, x: usize, y: usize) -> bool {
        self.bits[(plane * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn is_frozen(&self, texel: usize) -> bool {
        self.bits[texel]
    }

    pub fn set(&mut self, plane: usize, x: usize, y: usize, v: bool) {
        self.bits[(plane * self.height + y) * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone)]
pub struct MpiInit {
    pub volume: MpiVolume,
    pub freeze: FreezeMask,
    /// Source pixels whose depth fell outside the depth range and were
    /// clamped onto the nearest end plane.
    pub clamped: usize,
}

/// Split the source view into depth bins and write each pixel onto its
/// nearest plane as an opaque, frozen texel inside the centered source
/// window. All other texels start transparent and trainable.
pub fn init_mpi(
    rgb: &RgbImage,
    depth: &DepthRaster,
    reference: &CameraModel,
    planes: usize,
    expansion: ExpansionSpec,
    depth_range: (f32, f32),
    spacing: PlaneSpacing,
) -> Result<MpiInit> {
    let k = &reference.intrinsics;
    if rgb.width() != k.width || rgb.height() != k.height || depth.width() != k.width || depth.height() != k.height {
        return Err(Error::Dimension(format!(
            "camera is {}x{} but rgb is {}x{} and depth is {}x{}",
            k.width,
            k.height,
            rgb.width(),
            rgb.height(),
            depth.width(),
            depth.height()
        )));
    }
    let mut volume = MpiVolume::new(*reference, planes, expansion, depth_range, spacing)?;
    let mut freeze = FreezeMask::for_volume(&volume);
    let deltas = volume.deltas();
    let (ox, oy) = volume.source_offset();
    let (near, far) = (depth_range.0 as f64, depth_range.1 as f64);
    let mut clamped = 0;
    for y in 0..k.height {
        for x in 0..k.width {
            let d = depth.get(x, y) as f64;
            if d < near || d > far {
                clamped += 1;
            }
            let plane = volume.nearest_plane(d);
            let c = rgb.get(x, y);
            let sigma = (OPAQUE_SIGMA_DELTA / deltas[plane]) as f32;
            volume.set_texel(plane, x + ox, y + oy, [c[0], c[1], c[2], sigma]);
            freeze.set(plane, x + ox, y + oy, true);
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} source pixels outside depth range [{near}, {far}] were clamped to the end planes");
    }
    Ok(MpiInit {
        volume,
        freeze,
        clamped,
    })
}

impl MpiVolume {
    pub fn reference_pose(&self) -> &Pose {
        &self.reference.pose
    }
}
