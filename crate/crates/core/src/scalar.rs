//! Scalar abstraction for the numeric core.
//!
//! The tensor engine, FFT, scan and filter math are generic over [`Scalar`]
//! so the same code runs at f32 or f64. Everything above the numeric core
//! (layers, training, CLI) uses the concrete `Real = f64` aliases from the
//! crate root.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an f64 constant. Exact for f64, rounds for narrower types.
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> f32 {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> f64 {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}
