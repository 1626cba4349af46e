//! Scalar abstraction for the quantum core.
//!
//! Everything that only needs field arithmetic plus `sin`/`cos`/`sqrt` is written
//! against [`Real`], so the same code runs in `f32` and `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type usable for amplitudes and probabilities.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Largest accepted deviation of a state norm from 1 before an operation
    /// refuses the state as unnormalized.
    const NORM_TOLERANCE: f64;
    /// Probabilities more negative than this are an error rather than rounding.
    const NEGATIVE_PROBABILITY_FLOOR: f64;

    /// Lossless-enough conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn deg_to_rad(deg: Self) -> Self {
        deg * Self::PI() / Self::lit(180.0)
    }
}

impl Real for f64 {
    const NORM_TOLERANCE: f64 = 1e-9;
    const NEGATIVE_PROBABILITY_FLOOR: f64 = -1e-15;
}

impl Real for f32 {
    const NORM_TOLERANCE: f64 = 1e-5;
    const NEGATIVE_PROBABILITY_FLOOR: f64 = -1e-6;
}
