//! Scalar abstraction shared by the whole crate.
//!
//! Every numerical routine is written against [`Real`], which is implemented
//! for `f32` and `f64`. The tolerances quoted in tests assume `f64`.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra as na;
use num_traits as nt;

/// Floating point scalar usable by the discretization.
pub trait Real:
    na::RealField
    + Copy
    + nt::FromPrimitive
    + nt::ToPrimitive
    + Display
    + LowerExp
    + Debug
    + Send
    + Sync
    + std::str::FromStr
    + 'static
{
    /// Machine epsilon.
    const EPS: Self;

    #[inline]
    fn lit(x: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        <Self as nt::FromPrimitive>::from_usize(n).expect("integer representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const EPS: Self = f32::EPSILON;
}

impl Real for f64 {
    const EPS: Self = f64::EPSILON;
}

/// `T::lit` without the turbofish noise.
#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::lit(x)
}
