//! Scalar abstraction shared by the geometric and algebraic layers.

use nalgebra::RealField;
use num_traits::{FloatConst, FromPrimitive};
use std::fmt::{Debug, Display};

/// Floating point type usable throughout the model, lifting and local solver.
///
/// Implemented for `f32` and `f64`. The semidefinite solver and the data
/// pipeline work in `f64` only. Elementary functions (`sqrt`, `atan2`, ...)
/// come from [`RealField`]; constants come from [`FloatConst`].
pub trait Real:
    RealField + FloatConst + FromPrimitive + Copy + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the implemented types.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    fn to_f64_lossy(self) -> f64;

    /// Machine epsilon of the concrete type.
    fn eps() -> Self;
}

impl Real for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn eps() -> Self {
        f64::EPSILON
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half<T: Real>() -> T {
        T::lit(0.5)
    }

    #[test]
    fn literals_round_trip() {
        assert_eq!(half::<f64>(), 0.5);
        assert_eq!(half::<f32>(), 0.5f32);
        assert_eq!(half::<f32>().to_f64_lossy(), 0.5);
        assert!(<f32 as Real>::eps() > <f64 as Real>::eps() as f32);
    }
}
