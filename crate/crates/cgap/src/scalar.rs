//! Scalar element type of tensors and network parameters.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar the numeric kernels are generic over.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum + Default + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant (a config value, a tolerance) into the scalar type.
#[inline]
pub fn from_f64<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("finite f64 representable as scalar")
}

/// Widen a scalar to `f64` for metrics and reporting.
#[inline]
pub fn to_f64<S: Scalar>(v: S) -> f64 {
    v.to_f64().expect("scalar representable as f64")
}
