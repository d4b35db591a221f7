//! The scalar abstraction behind every differentiable buffer.
//!
//! The pipeline runs in `f32` by default; gradient verification instantiates
//! the same code with `f64` because central finite differences are unreliable
//! at single precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

pub trait Real:
    Float + AddAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    const IS_F64: bool;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Real for f32 {
    const IS_F64: bool = false;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const IS_F64: bool = true;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}
