//! Floating-point scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Any float type usable by the exact-test and p-value-combination kernels.
///
/// `f64` is the type the rest of the pipeline runs on (see [`crate::Real`]);
/// `f32` satisfies the same contracts at reduced precision.
pub trait Scalar:
    Float + FromPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable")
    }

    fn from_index(n: usize) -> Self {
        Self::from_usize(n).expect("index representable")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}
