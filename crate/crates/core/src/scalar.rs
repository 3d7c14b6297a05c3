//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts a literal. Panics only if the literal is not representable,
    /// which cannot happen for finite `f64` values and `f32`/`f64` targets.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("finite literal")
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sums values left to right starting from zero.
///
/// Every aggregate in the crate goes through this so that the in-process
/// engine and the message-passing runtime add the same numbers in the same
/// order and produce bit-identical totals.
pub fn ordered_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().fold(T::zero(), |acc, v| acc + v)
}

pub fn clamp<T: Scalar>(value: T, lo: T, hi: T) -> T {
    value.max(lo).min(hi)
}
