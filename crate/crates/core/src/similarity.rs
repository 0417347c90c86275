//! Cosine similarity and InfoNCE-style softmax scoring.

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine<F: Scalar>(u: &Embedding<F>, v: &Embedding<F>) -> Result<F> {
    cosine_slices(u.values(), v.values())
}

pub fn cosine_slices<F: Scalar>(u: &[F], v: &[F]) -> Result<F> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let (mut dot, mut uu, mut vv) = (F::zero(), F::zero(), F::zero());
    for (a, b) in u.iter().zip(v) {
        dot = dot + *a * *b;
        uu = uu + *a * *a;
        vv = vv + *b * *b;
    }
    if uu == F::zero() || vv == F::zero() {
        return Err(Error::ZeroVector);
    }
    let c = dot / (uu.sqrt() * vv.sqrt());
    Ok(c.max(-F::one()).min(F::one()))
}

/// Maps a cosine in `[-1, 1]` to a relevance score in `[0, 1]`.
pub fn relevance<F: Scalar>(cos: F) -> F {
    ((cos + F::one()) / lit(2.0)).max(F::zero()).min(F::one())
}

/// `exp(s_i / tau) / sum_j exp(s_j / tau)` with max-subtraction.
///
/// Every output is strictly positive for finite inputs as long as the spread
/// of `s / tau` stays within the exponent range of `F`; outputs that would
/// underflow are floored at the smallest positive normal value.
pub fn softmax<F: Scalar>(sims: &[F], tau: F) -> Result<Vec<F>> {
    if sims.is_empty() {
        return Err(Error::InvalidInput("softmax over an empty candidate set".into()));
    }
    if !tau.is_finite() || tau <= F::zero() {
        return Err(Error::InvalidInput(format!("temperature must be positive and finite, got {tau}")));
    }
    let max = sims.iter().copied().fold(F::neg_infinity(), F::max);
    let mut weights: Vec<F> = sims.iter().map(|s| ((*s - max) / tau).exp().max(F::min_positive_value())).collect();
    let total: F = weights.iter().copied().sum();
    for w in &mut weights {
        *w = *w / total;
    }
    Ok(weights)
}

/// InfoNCE probabilities of each candidate against the query. Zero-norm
/// candidates get similarity 0 instead of failing the whole scoring pass.
pub fn infonce_scores<F: Scalar>(query: &Embedding<F>, candidates: &[&Embedding<F>], tau: F) -> Result<Vec<F>> {
    let sims = similarities(query, candidates)?;
    softmax(&sims, tau)
}

/// Cosine of each candidate against the query, with zero-norm vectors
/// scored as 0.
pub fn similarities<F: Scalar>(query: &Embedding<F>, candidates: &[&Embedding<F>]) -> Result<Vec<F>> {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| match cosine(query, c) {
            Err(Error::ZeroVector) => {
                log::warn!("zero-norm embedding in scoring (candidate {i}); using similarity 0");
                Ok(F::zero())
            }
            other => other,
        })
        .collect()
}

/// Indices ordered by descending similarity, ties broken by ascending index.
pub fn rank_descending<F: Scalar>(sims: &[F]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn e<F: Scalar>(v: &[f64]) -> Embedding<F> {
        Embedding::new(v.iter().map(|x| lit::<F>(*x)).collect()).unwrap()
    }

    fn cosine_cases<F: Scalar>() {
        let x = e::<F>(&[0.3, -1.2, 2.0]);
        assert_abs_diff_eq!(cosine(&x, &x).unwrap().to_f64().unwrap(), 1.0, epsilon = 1e-6);
        assert_eq!(cosine(&e::<F>(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), F::zero());
        // dot = 1, |u| = sqrt 2, |v| = 1
        let c = cosine(&e::<F>(&[1.0, 1.0]), &e(&[1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(c.to_f64().unwrap(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-6);
    }

    #[test]
    fn cosine_examples_f64_and_f32() {
        cosine_cases::<f64>();
        cosine_cases::<f32>();
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine(&e::<f64>(&[0.0, 0.0]), &e(&[1.0, 0.0])), Err(Error::ZeroVector)));
        assert!(matches!(
            cosine(&e::<f64>(&[1.0]), &e(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.4f64; 4], 1.0).unwrap();
        for x in &p {
            assert_abs_diff_eq!(*x, 0.25, epsilon = 1e-12);
        }
        // e / (e + 1) and 1 / (e + 1)
        let p = softmax(&[1.0f64, 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.73106, epsilon = 1e-5);
        assert_abs_diff_eq!(p[1], 0.26894, epsilon = 1e-5);
        assert_eq!(softmax(&[0.3f32], 0.1).unwrap(), vec![1.0]);
        assert!(softmax::<f64>(&[], 1.0).is_err());
        assert!(softmax(&[1.0f64], 0.0).is_err());
    }

    #[test]
    fn zero_candidate_scores_as_orthogonal() {
        let q = e::<f64>(&[1.0, 0.0]);
        let z = e::<f64>(&[0.0, 0.0]);
        let o = e::<f64>(&[0.0, 1.0]);
        let p = infonce_scores(&q, &[&z, &o], 1.0).unwrap();
        assert_abs_diff_eq!(p[0], p[1], epsilon = 1e-15);
    }

    #[test]
    fn relevance_is_affine() {
        assert_eq!(relevance(-1.0f64), 0.0);
        assert_eq!(relevance(0.0f64), 0.5);
        assert_eq!(relevance(1.0f32), 1.0);
    }

    #[test]
    fn ranks_with_index_tie_break() {
        assert_eq!(rank_descending(&[0.2, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(rank_descending(&[0.5, 0.5, 0.1]), vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_positive(sims in prop::collection::vec(-1.0f64..1.0, 1..500), tau in 0.05f64..20.0) {
            let p = softmax(&sims, tau).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|x| *x > 0.0));
        }

        #[test]
        fn softmax_monotone_in_own_similarity(sims in prop::collection::vec(-1.0f64..1.0, 2..50), bump in 1e-6f64..0.5) {
            let base = softmax(&sims, 1.0).unwrap();
            let mut raised = sims.clone();
            raised[0] += bump;
            let after = softmax(&raised, 1.0).unwrap();
            prop_assert!(after[0] > base[0]);
        }

        #[test]
        fn cosine_symmetric_and_bounded(u in prop::collection::vec(-5.0f64..5.0, 3), v in prop::collection::vec(-5.0f64..5.0, 3)) {
            let (a, b) = (Embedding::new(u).unwrap(), Embedding::new(v).unwrap());
            if let (Ok(x), Ok(y)) = (cosine(&a, &b), cosine(&b, &a)) {
                prop_assert_eq!(x, y);
                prop_assert!((-1.0..=1.0).contains(&x));
            }
        }
    }
}
