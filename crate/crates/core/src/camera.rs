//! Pinhole cameras, rigid poses, plane homographies and expanded-frustum
//! geometry.
//!
//! Conventions, fixed for the whole crate:
//! - right-handed frames, the camera looks along +z, image y points down;
//! - a pose maps world points into the camera frame: `x_cam = R * x_world + t`;
//! - integer pixel coordinates address pixel centers.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Pinhole intrinsics plus sensor size, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center, horizontal field
    /// of view `fov_x` in radians.
    pub fn centered(width: usize, height: usize, fov_x: f64) -> Result<Self> {
        if !(fov_x > 0.0 && fov_x < std::f64::consts::PI) {
            return Err(Error::Domain(format!("field of view {fov_x} rad outside (0, pi)")));
        }
        let f = width as f64 / (2.0 * (fov_x / 2.0).tan());
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidCamera("principal point is not finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!(
                "sensor size {}x{} is empty",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Focal length and extent (in pixels) of the longer image border.
    pub fn long_border(&self) -> (f64, f64) {
        if self.width >= self.height {
            (self.fx, self.width as f64)
        } else {
            (self.fy, self.height as f64)
        }
    }

    /// Full field of view across the longer border.
    pub fn fov(&self) -> f64 {
        let (f, w) = self.long_border();
        2.0 * (w / (2.0 * f)).atan()
    }
}

/// Rigid transform `x_cam = rotation * x_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let p = Self {
            rotation,
            translation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation `Rx(pitch) * Ry(yaw)` with no translation.
    pub fn from_yaw_pitch(yaw: f64, pitch: f64) -> Self {
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), pitch);
        Self {
            rotation: (rx * ry).into_inner(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation about the optical axis.
    pub fn from_roll(roll: f64) -> Self {
        Self {
            rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), roll).into_inner(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().any(|v| !v.is_finite()) || self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("pose has non-finite entries".into()));
        }
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (max |R^T R - I| = {err:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(())
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    /// Transform taking points in `reference`'s camera frame into this
    /// camera's frame.
    pub fn relative_to(&self, reference: &Pose) -> Pose {
        self.compose(&reference.inverse())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Intrinsics together with the world-to-camera pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self> {
        intrinsics.validate()?;
        pose.validate()?;
        Ok(Self { intrinsics, pose })
    }

    pub fn at_origin(intrinsics: Intrinsics) -> Self {
        Self {
            intrinsics,
            pose: Pose::identity(),
        }
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        Self {
            intrinsics: self.intrinsics,
            pose,
        }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }
}

/// Plane-size expansion `a` and the matching full frustum angle `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionSpec {
    pub a: f64,
    pub theta: f64,
}

impl ExpansionSpec {
    /// No expansion: the frustum is the camera's own.
    pub fn none(intrinsics: &Intrinsics) -> Self {
        Self {
            a: 1.0,
            theta: intrinsics.fov(),
        }
    }

    pub fn from_theta(intrinsics: &Intrinsics, theta: f64) -> Result<Self> {
        let (f, w) = intrinsics.long_border();
        let a = expansion_factor(f, w, theta)?;
        if a < 1.0 - 1e-12 {
            return Err(Error::Domain(format!(
                "frustum angle {theta} rad is narrower than the camera field of view {} rad",
                intrinsics.fov()
            )));
        }
        Ok(Self { a: a.max(1.0), theta })
    }

    pub fn from_factor(intrinsics: &Intrinsics, a: f64) -> Result<Self> {
        if !(a >= 1.0 && a.is_finite()) {
            return Err(Error::Domain(format!("expansion factor {a} must be >= 1")));
        }
        let (f, w) = intrinsics.long_border();
        Ok(Self {
            a,
            theta: expanded_fov(f, w, a)?,
        })
    }

    /// Expanded plane size `(width, height)` for a source sensor.
    pub fn plane_size(&self, intrinsics: &Intrinsics) -> (usize, usize) {
        // the epsilon keeps a == 1 from rounding up a whole pixel
        let w = (self.a * intrinsics.width as f64 - 1e-9).ceil().max(1.0) as usize;
        let h = (self.a * intrinsics.height as f64 - 1e-9).ceil().max(1.0) as usize;
        (w, h)
    }
}

/// Expansion factor relating the plane's long border `w`, focal length `f`
/// and the enlarged frustum angle: `w * a / (2 f) = tan(theta / 2)`.
pub fn expansion_factor(f: f64, w: f64, theta: f64) -> Result<f64> {
    if !(f > 0.0 && w > 0.0) {
        return Err(Error::Domain(format!("focal {f} and border {w} must be positive")));
    }
    if !(theta > 0.0 && theta < std::f64::consts::PI) {
        return Err(Error::Domain(format!("frustum angle {theta} rad outside (0, pi)")));
    }
    Ok(2.0 * f * (theta / 2.0).tan() / w)
}

/// Inverse of [`expansion_factor`].
pub fn expanded_fov(f: f64, w: f64, a: f64) -> Result<f64> {
    if !(f > 0.0 && w > 0.0 && a > 0.0) {
        return Err(Error::Domain(format!(
            "focal {f}, border {w} and factor {a} must be positive"
        )));
    }
    Ok(2.0 * (w * a / (2.0 * f)).atan())
}

/// Homography taking pixels of camera `from` to pixels of camera `to` for
/// the fronto-parallel plane `z = depth` in `from`'s frame, where
/// `relative` maps `from`-frame points into the `to` frame.
///
/// Evaluates `K_to (R - t nᵀ / d) K_from⁻¹` with `n = (0, 0, -1)`, the plane
/// normal facing the camera. Rendering gathers, so it uses the inverse of
/// this matrix (target pixels to plane texels).
pub fn plane_homography(
    from: &Intrinsics,
    to: &Intrinsics,
    relative: &Pose,
    depth: f64,
) -> Result<Matrix3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::Domain(format!("plane depth {depth} must be positive")));
    }
    let normal = Vector3::new(0.0, 0.0, -1.0);
    let m = relative.rotation - relative.translation * normal.transpose() / depth;
    Ok(to.matrix() * m * from.inverse_matrix())
}

/// Apply a homography to a pixel, returning `None` when the homogeneous
/// coordinate is not positive.
#[inline]
pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> Option<(f64, f64)> {
    let w = h[(2, 0)] * x + h[(2, 1)] * y + h[(2, 2)];
    if w <= 0.0 || !w.is_finite() {
        return None;
    }
    let u = (h[(0, 0)] * x + h[(0, 1)] * y + h[(0, 2)]) / w;
    let v = (h[(1, 0)] * x + h[(1, 1)] * y + h[(1, 2)]) / w;
    Some((u, v))
}

/// Lift a pixel at `depth` into `intrinsics`' camera frame.
#[inline]
pub fn backproject(intrinsics: &Intrinsics, x: f64, y: f64, depth: f64) -> Vector3<f64> {
    Vector3::new(
        (x - intrinsics.cx) / intrinsics.fx * depth,
        (y - intrinsics.cy) / intrinsics.fy * depth,
        depth,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    /// False when the point is on or behind the image plane (`z <= 0`).
    pub valid: bool,
}

/// Project a camera-frame point. Points with `z <= 0` come back flagged
/// invalid rather than as an error.
#[inline]
pub fn project(intrinsics: &Intrinsics, p: &Vector3<f64>) -> Projection {
    if !(p.z > 0.0) {
        return Projection {
            x: f64::NAN,
            y: f64::NAN,
            depth: p.z,
            valid: false,
        };
    }
    Projection {
        x: intrinsics.fx * p.x / p.z + intrinsics.cx,
        y: intrinsics.fy * p.y / p.z + intrinsics.cy,
        depth: p.z,
        valid: true,
    }
}

/// Bounds for [`sample_poses`]. Angles in radians; translations in scene
/// depth units, expressed in the reference camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRanges {
    pub max_translation: [f64; 3],
    pub max_yaw: f64,
    pub max_pitch: f64,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            max_translation: [0.1, 0.1, 0.1],
            max_yaw: 5f64.to_radians(),
            max_pitch: 3f64.to_radians(),
        }
    }
}

/// Jitter `reference` by a uniform camera-center offset inside the
/// translation box and uniform yaw/pitch. The first pose is always
/// `reference` itself.
pub fn sample_poses(reference: &Pose, ranges: &PoseRanges, n: usize, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n.max(1));
    out.push(*reference);
    let sym = |rng: &mut ChaCha8Rng, bound: f64| {
        if bound > 0.0 {
            rng.gen_range(-bound..=bound)
        } else {
            0.0
        }
    };
    for _ in 1..n {
        let offset = Vector3::new(
            sym(&mut rng, ranges.max_translation[0]),
            sym(&mut rng, ranges.max_translation[1]),
            sym(&mut rng, ranges.max_translation[2]),
        );
        let yaw = sym(&mut rng, ranges.max_yaw);
        let pitch = sym(&mut rng, ranges.max_pitch);
        let jitter = Pose::from_yaw_pitch(yaw, pitch);
        // new camera: x_new = R_j (x_ref - offset)
        let local = Pose {
            rotation: jitter.rotation,
            translation: -(jitter.rotation * offset),
        };
        out.push(local.compose(reference));
    }
    out
}

/// Yaw and pitch of a rotation built as `Rx(pitch) * Ry(yaw)`.
pub fn yaw_pitch(rotation: &Matrix3<f64>) -> (f64, f64) {
    let yaw = rotation[(0, 2)].atan2(rotation[(0, 0)]);
    let pitch = rotation[(2, 1)].atan2(rotation[(1, 1)]);
    (yaw, pitch)
}
