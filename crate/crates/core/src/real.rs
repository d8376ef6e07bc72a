//! Scalar abstraction over `f32`/`f64`.
//!
//! Networks and losses are generic over [`Real`] so that production training
//! runs in single precision while gradient-check tests instantiate the exact
//! same code in double precision, where central finite differences are
//! meaningful.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy cast from `f64`; used for constants and RNG draws.
    fn c(v: f64) -> Self;
    /// Widen to `f64` for accumulation and reporting.
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn c(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn c(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}
