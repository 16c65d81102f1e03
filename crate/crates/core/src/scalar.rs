//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Floating point element type: `f32` or `f64`.
///
/// Networks, relevance maps and spectral routines are all written against
/// this trait. File formats store parameters and heatmaps as little-endian
/// `f32`, so conversions go through [`Scalar::to_f32_lossy`] and
/// [`Scalar::from_f32_exact`].
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self;

    fn from_f32_exact(v: f32) -> Self;

    fn to_f32_lossy(self) -> f32;

    fn to_f64_lossless(self) -> f64;

    fn from_count(v: usize) -> Self {
        Self::from_f64_lossy(v as f64)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn from_f32_exact(v: f32) -> Self {
        v
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    #[inline]
    fn from_f32_exact(v: f32) -> Self {
        v as f64
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
}

/// Shorthand for literals inside generic code.
#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}
