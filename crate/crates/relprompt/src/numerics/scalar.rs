use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar the math kernels are generic over.
///
/// Training runs in `f32`; gradient checks run the same code in `f64` so
/// finite differences are not dominated by rounding noise.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 not representable in scalar type")
    }

    fn from_usize_c(x: usize) -> Self {
        Self::from_usize(x).expect("usize not representable in scalar type")
    }

    fn to_f64c(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
