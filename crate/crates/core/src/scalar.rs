//! Floating-point abstraction shared by every numerical routine.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type the solvers are generic over: `f32` or `f64`.
///
/// `RealField` supplies the elementary functions and the linear algebra;
/// `num-traits` supplies lossless-enough conversion from literal constants.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Default {
    /// Tolerance floor appropriate for this precision.
    fn tol_floor() -> Self {
        Self::default_epsilon() * cast(1.0e3)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite literal")
}

/// Converts a count into `T`.
#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("representable count")
}

/// Converts `T` into `f64` for reporting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `max(tol, floor)`: a requested tolerance never drops below what the precision can resolve.
#[inline]
pub fn tol<T: Real>(requested: f64) -> T {
    let t: T = cast(requested);
    if t < T::tol_floor() {
        T::tol_floor()
    } else {
        t
    }
}
