//! Stepwise selection of in-context demonstrations for tool-using agents.
//!
//! At every agent step the live context (task plus action/observation
//! history) is summarized into transferable knowledge, embedded, and scored
//! against the cached knowledge of each pool demonstration; the top-scoring
//! demonstrations replace the prompt's demo block before the agent acts.

pub mod backends;
pub mod embedding;
pub mod env;
pub mod error;
pub mod eval;
pub mod model;
pub mod retriever;
pub mod runtime;
pub mod scalar;
pub mod selector;
pub mod similarity;

pub use error::{Error, Result};

/// Embedding vectors produced by the backends.
pub type EmbeddingVector = embedding::Embedding<f64>;
/// Single-precision embeddings, for scoring compact vectors.
pub type EmbeddingVectorF32 = embedding::Embedding<f32>;
