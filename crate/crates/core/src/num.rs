//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable throughout the library: `f32` or `f64`.
///
/// Everything that is pure linear algebra is written against this trait.
/// Special functions (normal CDF and quantile) and random draws are evaluated
/// in `f64` and converted back, so `f32` instantiations carry `f32` storage
/// with `f64` intermediate accuracy for those calls.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Lossless for f64, rounding for f32.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable in every Real")
    }

    fn f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("every Real converts to f64")
    }

    fn of_usize(x: usize) -> Self {
        Self::of(x as f64)
    }
}

impl Real for f32 {}
impl Real for f64 {}
