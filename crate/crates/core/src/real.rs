//! Floating point abstraction for the differentiable render path.
//!
//! Rendering, compositing, filtering and their adjoints are generic over
//! [`Real`] so the optimizer and gradient checker can run the same code in
//! single or double precision.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use serde::{Deserialize, Serialize};

pub trait Real: Float + NumAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn as_f32(self) -> f32;
}

impl Real for f32 {
    #[inline(always)]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn as_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    #[inline(always)]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Arithmetic precision selector for optimization and gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision '{other}' (expected f32 or f64)")),
        }
    }
}
