use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type for every tensor, index and metric in the crate.
///
/// Training runs in `f32`; gradient checks and the clustering/metric oracles
/// run in `f64`. There is no exact/rational instance: every model and metric
/// path needs `exp`, `ln` or `sqrt`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and initializers.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip<T: Scalar>(v: f64) -> f64 {
        T::lit(v).to_f64_lossy()
    }

    #[test]
    fn literals_survive_both_widths() {
        assert_eq!(roundtrip::<f64>(0.1), 0.1);
        assert!((roundtrip::<f32>(0.1) - 0.1).abs() < 1e-7);
        assert_eq!(f32::from_usize_lossy(7), 7.0);
    }
}
