//! Floating-point scalar abstraction for the numeric kernels.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! code runs at f32 for experiments and at f64 for reference oracles and
//! finite-difference gradient checks. Transcendentals route through `libm`
//! so results are bit-identical across platforms and codegen options.

use num_traits::{Float, FromPrimitive, NumAssignOps};

pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn exp_(self) -> Self;
    fn ln_(self) -> Self;
    fn erf_(self) -> Self;

    fn from_f64_(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    fn to_f64_(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {
    fn exp_(self) -> Self {
        libm::expf(self)
    }

    fn ln_(self) -> Self {
        libm::logf(self)
    }

    fn erf_(self) -> Self {
        libm::erf(self as f64) as f32
    }
}

impl Scalar for f64 {
    fn exp_(self) -> Self {
        libm::exp(self)
    }

    fn ln_(self) -> Self {
        libm::log(self)
    }

    fn erf_(self) -> Self {
        libm::erf(self)
    }
}
