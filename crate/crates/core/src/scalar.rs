//! Scalar abstraction for the similarity and scoring math.
//!
//! Embeddings coming out of the backends are `f64`, but the math in
//! [`crate::similarity`] works for any IEEE float so the same code can score
//! `f32` vectors served by a compact embedding model.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Machine-epsilon-scaled slack used when clamping rounded results.
    fn rounding_slack() -> Self {
        Self::epsilon() * Self::from_f64(16.0).unwrap()
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

#[inline]
pub(crate) fn lit<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("literal representable in scalar type")
}
