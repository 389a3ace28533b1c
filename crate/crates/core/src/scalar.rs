//! Scalar abstraction for the numeric core.
//!
//! Everything that touches probabilities, objectives or gradients is
//! generic over [`Real`], so the same kernels run in `f32` or `f64`.
//! Concrete `f64` aliases for the main types live at the crate root.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, NumCast};

/// Floating-point scalar used throughout the numeric core.
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(value: f64) -> Self {
        <Self as NumCast>::from(value).expect("value not representable in scalar type")
    }

    fn from_usize(value: usize) -> Self {
        <Self as NumCast>::from(value).expect("value not representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    /// Tolerance for "probabilities sum to one" checks on stored instances.
    fn strict_tol() -> Self;

    /// Tolerance for simplex mass drift in iterative updates.
    fn mass_tol() -> Self;

    /// Support weights below this are pruned from sparse iterates.
    fn prune_eps() -> Self;
}

impl Real for f64 {
    fn strict_tol() -> Self {
        1e-12
    }

    fn mass_tol() -> Self {
        1e-9
    }

    fn prune_eps() -> Self {
        1e-15
    }
}

impl Real for f32 {
    fn strict_tol() -> Self {
        1e-5
    }

    fn mass_tol() -> Self {
        1e-4
    }

    fn prune_eps() -> Self {
        1e-7
    }
}
