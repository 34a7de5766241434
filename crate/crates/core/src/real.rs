use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::problem::EllMatrix;

/// Storage precision for matrices and vectors.
///
/// Implemented for `f64` (high) and `f32` (low). Conversions go through `f64`,
/// which is exact for every `f32` value.
pub trait Real:
    Copy
    + Default
    + Debug
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    /// Width of one value in bytes.
    const BYTES: usize;
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn zero() -> Self {
        Self::default()
    }

    /// Picks the matrix copy stored at this precision.
    fn select<'a>(hi: &'a EllMatrix<f64>, lo: &'a EllMatrix<f32>) -> &'a EllMatrix<Self>;
}

impl Real for f64 {
    const BYTES: usize = 8;
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    fn select<'a>(hi: &'a EllMatrix<f64>, _lo: &'a EllMatrix<f32>) -> &'a EllMatrix<Self> {
        hi
    }
}

impl Real for f32 {
    const BYTES: usize = 4;
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn select<'a>(_hi: &'a EllMatrix<f64>, lo: &'a EllMatrix<f32>) -> &'a EllMatrix<Self> {
        lo
    }
}
