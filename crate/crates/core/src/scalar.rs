//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used throughout the crate: `f32` or `f64`.
pub trait Real:
    'static
    + Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    /// Conversion from an index or count.
    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Largest representable value strictly below `x` (for finite positive `x`).
pub(crate) fn just_below<T: Real>(x: T) -> T {
    let step = x.abs().max(T::min_positive_value()) * T::epsilon();
    let below = x - step;
    if below < x {
        below
    } else {
        x - step * T::lit(2.0)
    }
}
