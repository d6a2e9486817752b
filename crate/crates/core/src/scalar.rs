//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating point scalar used for distances and flow coefficients: `f32` or `f64`.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Converts an `f64` value, saturating to infinity on overflow.
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(|| {
            if v > 0.0 {
                Self::infinity()
            } else {
                Self::neg_infinity()
            }
        })
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Exact ratio of two counts, rounded once.
    fn ratio(num: u64, den: u64) -> Self {
        Self::from_f64_lossy(num as f64 / den as f64)
    }
}

impl Scalar for f32 {
    fn ratio(num: u64, den: u64) -> Self {
        (num as f64 / den as f64) as f32
    }
}

impl Scalar for f64 {}
