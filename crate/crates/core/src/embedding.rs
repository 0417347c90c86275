use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A finite, fixed-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "Vec<F>",
    into = "Vec<F>",
    bound(serialize = "F: Scalar + Serialize", deserialize = "F: Scalar + Deserialize<'de>")
)]
pub struct Embedding<F: Scalar> {
    values: Vec<F>,
}

impl<F: Scalar> Embedding<F> {
    pub fn new(values: Vec<F>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("embedding has zero dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("embedding contains a non-finite value".into()));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn norm(&self) -> F {
        self.values.iter().map(|v| *v * *v).sum::<F>().sqrt()
    }

    /// Scales to unit L2 norm; a zero vector is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > F::zero() {
            for v in &mut self.values {
                *v = *v / n;
            }
        }
        self
    }
}

impl<F: Scalar> TryFrom<Vec<F>> for Embedding<F> {
    type Error = Error;

    fn try_from(values: Vec<F>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl<F: Scalar> From<Embedding<F>> for Vec<F> {
    fn from(e: Embedding<F>) -> Self {
        e.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(Embedding::<f64>::new(vec![]).is_err());
        assert!(Embedding::new(vec![1.0, f64::NAN]).is_err());
        assert!(Embedding::new(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn normalizes_to_unit_length() {
        let e = Embedding::new(vec![3.0f32, 4.0]).unwrap().normalized();
        assert!((e.norm() - 1.0).abs() < 1e-6);
        let z = Embedding::new(vec![0.0f64, 0.0]).unwrap().normalized();
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn serializes_as_plain_array() {
        let e = Embedding::new(vec![0.5f64, -0.25]).unwrap();
        assert_eq!(serde_json::to_string(&e).unwrap(), "[0.5,-0.25]");
        assert!(serde_json::from_str::<Embedding<f64>>("[]").is_err());
    }
}
