//! Camera trajectory files: a JSON array of posed cameras,
//!
//! ```json
//! [{"R": [r00, r01, r02, r10, ..., r22], "t": [tx, ty, tz],
//!   "fx": .., "fy": .., "cx": .., "cy": .., "width": W, "height": H}]
//! ```
//!
//! `R` is row-major and `(R, t)` maps world points into the camera frame.
//! Floats are written with 17 significant digits, so parse followed by
//! emit reproduces every value bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Intrinsics, Pose};
use crate::error::{Error, Result};

use super::{read_bytes, write_atomic};

/// One camera in its on-disk form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<&CameraModel> for CameraEntry {
    fn from(c: &CameraModel) -> Self {
        let r = &c.pose.rotation;
        let k = &c.intrinsics;
        Self {
            r: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            t: [c.pose.translation.x, c.pose.translation.y, c.pose.translation.z],
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl CameraEntry {
    /// Validated camera; fails on a non-orthonormal `R` or bad intrinsics.
    pub fn camera(&self) -> Result<CameraModel> {
        let pose = Pose::new(Matrix3::from_row_slice(&self.r), Vector3::from(self.t))?;
        let k = Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        CameraModel::new(k, pose)
    }

    fn write_json(&self, out: &mut String) {
        let list = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", ");
        let _ = write!(
            out,
            "{{\"R\": [{}], \"t\": [{}], \"fx\": {}, \"fy\": {}, \"cx\": {}, \"cy\": {}, \"width\": {}, \"height\": {}}}",
            list(&self.r),
            list(&self.t),
            fmt_f64(self.fx),
            fmt_f64(self.fy),
            fmt_f64(self.cx),
            fmt_f64(self.cy),
            self.width,
            self.height
        );
    }

    pub fn to_json(&self) -> String {
        let mut s = String::new();
        self.write_json(&mut s);
        s
    }
}

/// 17 significant digits: enough to round-trip any finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_trajectory(path: &Path, text: &str) -> Result<Vec<CameraModel>> {
    let entries: Vec<CameraEntry> = serde_json::from_str(text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| e.camera().map_err(|err| Error::format(path, format!("entry {i}: {err}"))))
        .collect()
}

pub fn emit_trajectory(cameras: &[CameraModel]) -> String {
    let mut s = String::from("[\n");
    for (i, c) in cameras.iter().enumerate() {
        s.push_str("  ");
        CameraEntry::from(c).write_json(&mut s);
        s.push_str(if i + 1 < cameras.len() { ",\n" } else { "\n" });
    }
    s.push_str("]\n");
    s
}

pub fn read_trajectory(path: &Path) -> Result<Vec<CameraModel>> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(path, format!("not UTF-8: {e}")))?;
    parse_trajectory(path, text)
}

pub fn write_trajectory(path: &Path, cameras: &[CameraModel]) -> Result<()> {
    write_atomic(path, emit_trajectory(cameras).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{sample_poses, PoseRanges};
    use proptest::prelude::*;

    fn cameras(n: usize, seed: u64) -> Vec<CameraModel> {
        let k = Intrinsics::new(51.123456789, 50.987654321, 31.7, 23.3, 64, 48).unwrap();
        sample_poses(&Pose::identity(), &PoseRanges::default(), n, seed)
            .into_iter()
            .map(|p| CameraModel::new(k, p).unwrap())
            .collect()
    }

    #[test]
    fn emit_parse_emit_is_stable() {
        let cams = cameras(6, 3);
        let text = emit_trajectory(&cams);
        let back = parse_trajectory(Path::new("t.json"), &text).unwrap();
        assert_eq!(back, cams);
        assert_eq!(emit_trajectory(&back), text);
    }

    #[test]
    fn accepts_plain_json_and_rejects_bad_rotations() {
        let text = r#"[{"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,0.5],"fx":10,"fy":10,"cx":4.5,"cy":4.5,"width":10,"height":10}]"#;
        let cams = parse_trajectory(Path::new("t.json"), text).unwrap();
        assert_eq!(cams[0].pose.translation.z, 0.5);
        let bad = text.replace("[1,0,0,0,1,0,0,0,1]", "[2,0,0,0,1,0,0,0,1]");
        let msg = parse_trajectory(Path::new("t.json"), &bad).unwrap_err().to_string();
        assert!(msg.contains("entry 0") && msg.contains("t.json"), "{msg}");
        assert!(parse_trajectory(Path::new("t.json"), r#"[{"R":[1]}]"#).is_err());
    }

    proptest! {
        #[test]
        fn floats_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = fmt_f64(v);
            let back: f64 = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
