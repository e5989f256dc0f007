//! Scalar abstraction: every numeric kernel in the crate is generic over a
//! floating-point type so the same code runs at `f32` (training, storage)
//! and `f64` (simulation, gradient checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum<Self>
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for the `T::from(x).unwrap()` cast that is pervasive in generic
/// numeric code. Panics only if the conversion is unrepresentable, which
/// cannot happen for finite `f64` into `f32`/`f64`.
#[inline]
pub fn cast<T: Scalar>(x: f64) -> T {
    T::from(x).expect("scalar cast")
}

/// Lossless widening of any scalar to `f64` for accumulation.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("scalar to f64")
}
