//! Floating-point scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// floating point: f32 or f64
pub trait Scalar:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; used for constants and sampled noise.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 is representable in every Scalar")
    }

    /// Exact for every count this crate handles (grid indices, particle counts).
    #[inline]
    fn of_usize(n: usize) -> Self {
        <Self as num_traits::FromPrimitive>::from_usize(n).expect("usize fits in Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn half() -> Self {
        Self::of(0.5)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dot product with a fixed left-to-right reduction order.
#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub(crate) fn norm_sq<S: Scalar>(a: &[S]) -> S {
    dot(a, a)
}

#[inline]
pub(crate) fn norm<S: Scalar>(a: &[S]) -> S {
    norm_sq(a).sqrt()
}

#[inline]
pub(crate) fn distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}
