//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
///
/// `Display` must print the shortest string that parses back to the same
/// value; both primitive floats satisfy this, which is what the text file
/// formats rely on for round-trip fidelity.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Display + Debug + FromStr + Default + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Display
        + Debug
        + FromStr
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub(crate) fn from_usize<T: Scalar>(x: usize) -> T {
    T::from_usize(x).expect("count representable in scalar type")
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn l2_norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn parse_scalar<T: Scalar>(s: &str) -> Option<T> {
    s.parse::<T>().ok()
}
