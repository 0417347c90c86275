//! Demonstration selection: score pool entries against the context TK and
//! keep the top `m`.
//!
//! Ranking is by cosine similarity with ascending pool index as the tie
//! break. The reported InfoNCE probabilities are a strictly monotone
//! function of the same cosines, so the top-`m` by probability is the same
//! list for every temperature.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{Embedder, TextGenerator};
use crate::error::{Error, Result};
use crate::model::DemoPool;
use crate::retriever::{KnowledgeRetriever, TkRecord};
use crate::similarity::{rank_descending, relevance, similarities, softmax};
use crate::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    DiceStepwise,
    DiceTaskwise,
    Random,
    KnnRaw,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::KnnRaw, Strategy::DiceTaskwise, Strategy::DiceStepwise];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::DiceStepwise => "dice_stepwise",
            Strategy::DiceTaskwise => "dice_taskwise",
            Strategy::Random => "random",
            Strategy::KnnRaw => "knn_raw",
        }
    }

    /// Strategies scoring against the pool's TK cache.
    pub fn needs_tk_cache(self) -> bool {
        matches!(self, Strategy::DiceStepwise | Strategy::DiceTaskwise)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown strategy {s:?} (expected one of dice_stepwise, dice_taskwise, random, knn_raw)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub strategy: Strategy,
    /// Demonstrations per step.
    pub m: usize,
    /// Softmax temperature for the reported probabilities.
    pub tau: f64,
    /// Trade-off weight of the selection criterion. With a fixed-capacity
    /// retriever the first term is constant and the ranking does not depend
    /// on it; kept so runs record the setting.
    pub beta: f64,
    pub seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig { strategy: Strategy::DiceStepwise, m: 2, tau: 1.0, beta: 1.0, seed: 0 }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("selector.tau must be positive, got {}", self.tau)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("selector.beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// One selection event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected pool indices, most relevant first.
    pub indices: Vec<usize>,
    /// Probability of every pool entry (pool order).
    pub probs: Vec<f64>,
    /// `(cos + 1) / 2` of each selected entry, aligned with `indices`.
    /// Empty for strategies that do not score (random).
    pub relevance: Vec<f64>,
    pub step_index: usize,
}

impl SelectionResult {
    pub fn empty(step_index: usize) -> Self {
        SelectionResult { indices: Vec::new(), probs: Vec::new(), relevance: Vec::new(), step_index }
    }
}

/// Scores `candidates` against `query` and keeps the best `m`.
pub fn select_by_embedding(
    query: &EmbeddingVector,
    candidates: &[&EmbeddingVector],
    m: usize,
    tau: f64,
    step_index: usize,
) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Ok(SelectionResult::empty(step_index));
    }
    let sims = similarities(query, candidates)?;
    let probs = softmax(&sims, tau)?;
    let indices: Vec<usize> = rank_descending(&sims).into_iter().take(m).collect();
    let relevance = indices.iter().map(|&i| relevance(sims[i])).collect();
    Ok(SelectionResult { indices, probs, relevance, step_index })
}

/// TK-based selection against a warm pool cache.
pub fn select(pool: &DemoPool, tk_t: &TkRecord, cfg: &SelectorConfig, step_index: usize) -> Result<SelectionResult> {
    if pool.is_empty() {
        return Ok(SelectionResult::empty(step_index));
    }
    let records = pool.cached_records().ok_or_else(|| Error::ColdCache("cold cache; run build-pool".into()))?;
    if let Some(r) = records.iter().find(|r| r.retriever_fingerprint != tk_t.retriever_fingerprint) {
        return Err(Error::ColdCache(format!(
            "cold cache; pool fingerprint {} does not match retriever {}; run build-pool",
            r.retriever_fingerprint, tk_t.retriever_fingerprint
        )));
    }
    let candidates: Vec<&EmbeddingVector> = records.iter().map(|r| &r.embedding).collect();
    select_by_embedding(&tk_t.embedding, &candidates, cfg.m, cfg.tau, step_index)
}

/// Extracts the TK of the bare task (no history) and selects once.
pub fn select_taskwise<G: TextGenerator, E: Embedder>(
    pool: &DemoPool,
    task: &str,
    cfg: &SelectorConfig,
    retriever: &KnowledgeRetriever<G, E>,
) -> Result<SelectionResult> {
    if pool.is_empty() {
        return Ok(SelectionResult::empty(0));
    }
    let tk = retriever.extract_tk_task(task, &[])?;
    select(pool, &tk, cfg, 0)
}

/// Seeded uniform sample without replacement; probabilities are uniform.
pub fn select_random(pool_len: usize, m: usize, seed: u64, step_index: usize) -> SelectionResult {
    if pool_len == 0 {
        return SelectionResult::empty(step_index);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = index::sample(&mut rng, pool_len, m.min(pool_len)).into_vec();
    SelectionResult { indices, probs: vec![1.0 / pool_len as f64; pool_len], relevance: Vec::new(), step_index }
}

/// Raw-text embeddings of every pool task, for kNN selection without TK.
#[derive(Debug, Clone, Default)]
pub struct RawTaskIndex {
    embeddings: Vec<EmbeddingVector>,
}

impl RawTaskIndex {
    pub fn build<E: Embedder + ?Sized>(pool: &DemoPool, embedder: &E) -> Result<Self> {
        if pool.is_empty() {
            return Ok(RawTaskIndex::default());
        }
        let texts: Vec<&str> = pool.entries().iter().map(|t| t.task.as_str()).collect();
        Ok(RawTaskIndex { embeddings: embedder.embed(&texts)? })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn select(&self, query: &EmbeddingVector, m: usize, tau: f64, step_index: usize) -> Result<SelectionResult> {
        let candidates: Vec<&EmbeddingVector> = self.embeddings.iter().collect();
        select_by_embedding(query, &candidates, m, tau, step_index)
    }
}
