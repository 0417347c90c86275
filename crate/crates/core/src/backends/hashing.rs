use std::hash::Hasher;

use fnv::FnvHasher;

use super::{check_embed_inputs, Embedder};
use crate::error::Result;
use crate::EmbeddingVector;

pub const DEFAULT_DIM: usize = 256;

/// Signed feature hashing of lowercase word unigrams, L2-normalized.
///
/// Each token is hashed (FNV-1a, salted with the seed) to a bucket and a
/// sign; the vector depends only on the token multiset, so word order is
/// irrelevant. A text without word characters maps to the zero vector.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
    name: String,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(DEFAULT_DIM, 0)
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim, seed, name: format!("hashing-{dim}-{seed}") }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0f64; self.dim];
        for token in tokens(text) {
            let mut h = FnvHasher::default();
            h.write_u64(self.seed);
            h.write(token.as_bytes());
            let code = h.finish();
            let bucket = (code % self.dim as u64) as usize;
            let sign = if (code >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign;
        }
        EmbeddingVector::new(values).expect("finite counts").normalized()
    }
}

/// Lowercased runs of alphanumeric characters.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        check_embed_inputs(texts)?;
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn model_name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bag_of_words() {
        let e = HashingEmbedder::default();
        let v = e.embed(&["a b", "b a", "A  B!"]).unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0], v[2]);
        assert_eq!(v[0].dim(), 256);
    }

    #[test]
    fn rejects_blank_inputs() {
        let e = HashingEmbedder::default();
        assert!(e.embed(&[]).is_err());
        assert!(e.embed(&["ok", "  "]).is_err());
    }

    #[test]
    fn seed_changes_the_projection() {
        let a = HashingEmbedder::new(64, 1).embed_one("search failure recovery");
        let b = HashingEmbedder::new(64, 2).embed_one("search failure recovery");
        assert_ne!(a, b);
    }

    #[test]
    fn pinned_output_is_stable() {
        // Reference values from an independent FNV-1a implementation; a
        // change here invalidates every persisted cache.
        let v = HashingEmbedder::default().embed_one("the quick brown fox");
        let nonzero: Vec<(usize, f64)> = v.values().iter().copied().enumerate().filter(|(_, x)| *x != 0.0).collect();
        assert_eq!(nonzero, vec![(156, 0.5), (174, -0.5), (188, -0.5), (239, 0.5)]);
    }

    proptest! {
        #[test]
        fn unit_norm(text in "[a-z]{1,8}( [a-z]{1,8}){0,12}") {
            let v = HashingEmbedder::default().embed_one(&text);
            // opposite-signed collisions can cancel to the zero vector
            prop_assume!(v.values().iter().any(|x| *x != 0.0));
            // independent arithmetic: sum of squares over the raw values
            let mut sq = 0.0f64;
            for x in v.values() { sq += x * x; }
            prop_assert!((sq.sqrt() - 1.0).abs() < 1e-6);
        }
    }
}
