//! Scalar abstraction for the numeric core.
//!
//! Everything that does arithmetic (attribution, the network, normalizers,
//! correlation) is written against [`Scalar`] so it runs at `f32` or `f64`.
//! The pipeline pins `f64` via the crate-root `Real` alias.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps};

pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for literals and RNG draws.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from(x).expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
