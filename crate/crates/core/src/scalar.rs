//! Floating-point abstraction shared by every numeric module.
//!
//! All of the cost, delay and telemetry arithmetic is written against [`Scalar`] so the
//! routing core can be instantiated at `f32` (embedded controllers) or `f64` (simulation).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::Serialize;

/// floating point: f32 or f64
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + 'static
{
    /// Converts an `f64` literal or configuration value.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("value representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Converts a count (ticks, hops, samples).
    #[inline]
    fn of_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Clamps `v` into `[lo, hi]`.
#[inline]
pub(crate) fn clamp<S: Scalar>(v: S, lo: S, hi: S) -> S {
    v.max(lo).min(hi)
}
