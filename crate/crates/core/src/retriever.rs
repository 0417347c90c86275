//! Transferable-knowledge (TK) extraction.
//!
//! A generation backend summarizes a demonstration, or the live task and
//! history, into entity-free strategy text; an embedding backend turns that
//! text into the vector the selector scores.

use std::collections::HashMap;
use std::path::Path;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{Embedder, GenRequest, TextGenerator};
use crate::error::{Error, Result};
use crate::model::{render_steps, AgentContext, DemoPool, Step, Trajectory};
use crate::EmbeddingVector;

pub const TK_MAX_TOKENS: u32 = 128;

pub const DEMO_TEMPLATE: &str = "Summarize, in 2-4 sentences, the reusable strategies, tool-usage patterns, and error-recovery tactics demonstrated below, omitting all task-specific entities and answers.";
pub const CONTEXT_TEMPLATE: &str = "Given the task and the interaction so far, describe in 2-4 sentences what kind of knowledge, strategy, or recovery tactic would most help decide the next action. Omit task-specific entities.";
const FALLBACK_INSTRUCTION: &str = "Answer with at least one complete sentence.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TkRecord {
    /// Demo id, or `context@<t>` for a live context.
    #[serde(rename = "id")]
    pub source_id: String,
    pub tk_text: String,
    pub embedding: EmbeddingVector,
    pub retriever_fingerprint: String,
}

impl TkRecord {
    pub fn new(
        source_id: impl Into<String>,
        tk_text: impl Into<String>,
        embedding: EmbeddingVector,
        retriever_fingerprint: impl Into<String>,
    ) -> Self {
        TkRecord {
            source_id: source_id.into(),
            tk_text: tk_text.into(),
            embedding,
            retriever_fingerprint: retriever_fingerprint.into(),
        }
    }
}

/// Prompt templates for demo and context extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TkTemplates {
    pub demo: String,
    pub context: String,
}

impl Default for TkTemplates {
    fn default() -> Self {
        TkTemplates { demo: DEMO_TEMPLATE.into(), context: CONTEXT_TEMPLATE.into() }
    }
}

impl TkTemplates {
    /// Reads `{"demo": ..., "context": ...}`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: TkTemplates =
            serde_json::from_str(&text).map_err(|e| Error::Format { line: e.line(), message: e.to_string() })?;
        if t.demo.trim().is_empty() || t.context.trim().is_empty() {
            return Err(Error::Config(format!("{}: templates must be non-empty", path.display())));
        }
        Ok(t)
    }

    pub fn demo_prompt(&self, demo: &Trajectory) -> String {
        format!("{}\n\n{}", self.demo, demo.render())
    }

    /// Task and history only; the context's demonstrations never enter the
    /// retriever prompt.
    pub fn context_prompt(&self, task: &str, history: &[Step]) -> String {
        format!("{}\n\nQuestion: {task}\n{}", self.context, render_steps(history))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub extracted: usize,
    pub reused: usize,
}

pub struct KnowledgeRetriever<G, E> {
    gen: G,
    embedder: E,
    templates: TkTemplates,
    fingerprint: String,
    demo_cache: RwLock<HashMap<String, TkRecord>>,
}

impl<G: TextGenerator, E: Embedder> KnowledgeRetriever<G, E> {
    pub fn new(gen: G, embedder: E) -> Self {
        Self::with_templates(gen, embedder, TkTemplates::default())
    }

    pub fn with_templates(gen: G, embedder: E, templates: TkTemplates) -> Self {
        let fingerprint = fingerprint(&templates, gen.model_name(), embedder.model_name());
        KnowledgeRetriever { gen, embedder, templates, fingerprint, demo_cache: RwLock::new(HashMap::new()) }
    }

    /// Hash of the templates, retriever model and embedding model.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn templates(&self) -> &TkTemplates {
        &self.templates
    }

    pub fn embedder(&self) -> &E {
        &self.embedder
    }

    fn summarize(&self, prompt: &str, source_id: &str) -> Result<String> {
        let req = GenRequest::new(prompt, TK_MAX_TOKENS);
        let text = match self.gen.generate(&req) {
            Ok(t) if !t.trim().is_empty() => t,
            Ok(_) | Err(Error::EmptyCompletion) => {
                let retry = GenRequest::new(format!("{prompt}\n\n{FALLBACK_INSTRUCTION}"), TK_MAX_TOKENS);
                match self.gen.generate(&retry) {
                    Ok(t) if !t.trim().is_empty() => t,
                    Ok(_) | Err(Error::EmptyCompletion) => {
                        return Err(Error::TkExtractionFailed { source_id: source_id.to_string() })
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        Ok(truncate_tokens(text.trim(), TK_MAX_TOKENS as usize))
    }

    fn record(&self, source_id: String, prompt: &str) -> Result<TkRecord> {
        let tk_text = self.summarize(prompt, &source_id)?;
        let embedding = self
            .embedder
            .embed(&[tk_text.as_str()])?
            .pop()
            .ok_or_else(|| Error::InvalidInput("embedder returned no vector".into()))?;
        if embedding.dim() != self.embedder.dim() {
            return Err(Error::DimensionMismatch { expected: self.embedder.dim(), got: embedding.dim() });
        }
        Ok(TkRecord { source_id, tk_text, embedding, retriever_fingerprint: self.fingerprint.clone() })
    }

    /// TK of one demonstration; served from the retriever's cache after the
    /// first extraction.
    pub fn extract_tk_demo(&self, demo: &Trajectory) -> Result<TkRecord> {
        if demo.steps.is_empty() {
            return Err(Error::InvalidInput(format!("demo {} has no steps", demo.id)));
        }
        if let Some(hit) = self.demo_cache.read().expect("cache lock").get(&demo.id) {
            return Ok(hit.clone());
        }
        let record = self.record(demo.id.clone(), &self.templates.demo_prompt(demo))?;
        let mut cache = self.demo_cache.write().expect("cache lock");
        Ok(cache.entry(demo.id.clone()).or_insert(record).clone())
    }

    /// TK of the live context (task and history; demos excluded).
    pub fn extract_tk_context(&self, ctx: &AgentContext) -> Result<TkRecord> {
        self.extract_tk_task(&ctx.task, &ctx.history)
    }

    pub fn extract_tk_task(&self, task: &str, history: &[Step]) -> Result<TkRecord> {
        if task.trim().is_empty() {
            return Err(Error::InvalidInput("task text is empty".into()));
        }
        self.record(format!("context@{}", history.len()), &self.templates.context_prompt(task, history))
    }

    /// Fills the pool's TK cache. Entries already cached under this
    /// retriever's fingerprint are kept; everything else is (re)extracted,
    /// fanned out across the rayon pool.
    pub fn build_pool_cache(&self, pool: &mut DemoPool) -> Result<CacheStats> {
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        let stale: Vec<&Trajectory> = pool
            .entries()
            .iter()
            .filter(|t| pool.tk(&t.id).is_none_or(|r| r.retriever_fingerprint != self.fingerprint))
            .collect();
        let reused = pool.len() - stale.len();
        let fresh: Vec<Result<TkRecord>> = stale.par_iter().map(|t| self.extract_tk_demo(t)).collect();
        let mut records = Vec::with_capacity(fresh.len());
        for (t, r) in stale.iter().zip(fresh) {
            match r {
                Ok(rec) => records.push(rec),
                Err(Error::TkExtractionFailed { .. }) => {
                    return Err(Error::TkExtractionFailed { source_id: t.id.clone() })
                }
                Err(e) => return Err(e),
            }
        }
        let extracted = records.len();
        for rec in records {
            pool.insert_tk(rec);
        }
        Ok(CacheStats { extracted, reused })
    }
}

fn fingerprint(templates: &TkTemplates, gen_model: &str, embed_model: &str) -> String {
    let mut h = Sha256::new();
    for part in [templates.demo.as_str(), templates.context.as_str(), gen_model, embed_model] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Keeps at most `max` whitespace tokens, cutting back to the last sentence
/// end when the text had to be shortened.
pub fn truncate_tokens(text: &str, max: usize) -> String {
    let mut end = text.len();
    for (count, (idx, _)) in
        text.split_whitespace().map(|w| (w.as_ptr() as usize - text.as_ptr() as usize, w)).enumerate()
    {
        if count == max {
            end = idx;
            break;
        }
    }
    if end == text.len() {
        return text.to_string();
    }
    let head = text[..end].trim_end();
    match head.rfind(['.', '!', '?']) {
        Some(pos) => head[..=pos].to_string(),
        None => head.to_string(),
    }
}
