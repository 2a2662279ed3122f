//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All matrices, datasets and encoders are generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. Random draws are always made in `f64` and
//! then narrowed, so both precisions consume identical RNG streams.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    /// Converts a count into this scalar type.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance used when the caller asks for `tol` but the precision
    /// cannot honour it (f32 cannot resolve 1e-10).
    #[inline]
    fn tolerance(tol: f64) -> Self {
        let floor = 100.0 * Self::epsilon().as_f64();
        Self::of(tol.max(floor))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
