//! Real-number abstraction shared by the cost model, the search and the simulator.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point type the planner computes in: `f32` or `f64`.
///
/// Counts (workers, cores, partitions, requests) stay integral everywhere;
/// only times, sizes in MB and money are generic.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal or profile constant.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn count(n: u64) -> Self {
        Self::from_u64(n).expect("u64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Bytes per megabyte (binary, as cloud memory sizes are quoted).
pub const BYTES_PER_MB: u64 = 1 << 20;
/// Megabytes per gigabyte.
pub const MB_PER_GB: u64 = 1 << 10;

pub(crate) fn bytes_to_mb<T: Scalar>(bytes: u64) -> T {
    T::count(bytes) / T::count(BYTES_PER_MB)
}
