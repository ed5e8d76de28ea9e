//! Floating-point abstraction shared by every solver in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the solvers are generic over (`f32` or `f64`).
///
/// Tolerances are tied to the precision of the type: the `f64` values are
/// the documented defaults, the `f32` ones are loosened to what single
/// precision can actually resolve.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Primal feasibility / multiplier sign tolerance for KKT acceptance.
    fn kkt_tol() -> Self;
    /// Symmetry and PSD tolerance for objective matrices.
    fn sym_tol() -> Self;
    /// Relative pivot threshold below which a factorization is singular.
    fn pivot_tol() -> Self;

    /// Converts an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn kkt_tol() -> Self {
        1e-8
    }
    fn sym_tol() -> Self {
        1e-9
    }
    fn pivot_tol() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn kkt_tol() -> Self {
        1e-4
    }
    fn sym_tol() -> Self {
        1e-5
    }
    fn pivot_tol() -> Self {
        1e-6
    }
}
