//! Scalar abstraction for probability rasters and loss kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the pipeline computes in: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for configuration constants.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to any Real")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
