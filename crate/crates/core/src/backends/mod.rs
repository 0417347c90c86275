//! Text-generation and embedding backends.
//!
//! Live runs talk to chat-completions style HTTP endpoints; tests and desk
//! runs use the deterministic doubles in [`scripted`] and [`hashing`].

pub mod hashing;
pub mod http;
pub mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::EmbeddingVector;

pub use hashing::HashingEmbedder;
pub use http::{HttpEmbedder, HttpGenerator, RetryPolicy};
pub use scripted::{ScriptRule, ScriptedGenerator};

pub const MAX_STOP_SEQUENCES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
}

impl GenRequest {
    pub fn new(prompt: impl Into<String>, max_tokens: u32) -> Self {
        GenRequest { prompt: prompt.into(), max_tokens, temperature: 0.0, stop: Vec::new() }
    }

    pub fn with_stop(mut self, stop: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.stop = stop.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::InvalidInput("max_tokens must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::InvalidInput(format!("temperature {} is negative", self.temperature)));
        }
        if self.stop.len() > MAX_STOP_SEQUENCES {
            return Err(Error::InvalidInput(format!("{} stop sequences exceed the limit of 4", self.stop.len())));
        }
        Ok(())
    }
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, req: &GenRequest) -> Result<String>;

    /// Model identity, folded into cache fingerprints.
    fn model_name(&self) -> &str;
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn model_name(&self) -> &str;
}

/// Rejects empty batches and blank texts before they reach a backend.
pub(crate) fn check_embed_inputs(texts: &[&str]) -> Result<()> {
    if texts.is_empty() {
        return Err(Error::InvalidInput("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::InvalidInput(format!("text {i} is blank")));
    }
    Ok(())
}

impl<T: TextGenerator + ?Sized> TextGenerator for &T {
    fn generate(&self, req: &GenRequest) -> Result<String> {
        (**self).generate(req)
    }
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

impl<T: TextGenerator + ?Sized> TextGenerator for Box<T> {
    fn generate(&self, req: &GenRequest) -> Result<String> {
        (**self).generate(req)
    }
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed(texts)
    }
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed(texts)
    }
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

/// Call counters. Token counts are whitespace-token approximations.
#[derive(Debug, Default)]
pub struct CallTelemetry {
    gen_calls: AtomicU64,
    embed_calls: AtomicU64,
    tokens_in: AtomicU64,
    tokens_out: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub gen_calls: u64,
    pub embed_calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

impl CallTelemetry {
    pub fn snapshot(&self) -> TelemetrySnapshot {
        TelemetrySnapshot {
            gen_calls: self.gen_calls.load(Ordering::Relaxed),
            embed_calls: self.embed_calls.load(Ordering::Relaxed),
            tokens_in: self.tokens_in.load(Ordering::Relaxed),
            tokens_out: self.tokens_out.load(Ordering::Relaxed),
        }
    }
}

impl std::ops::Add for TelemetrySnapshot {
    type Output = TelemetrySnapshot;

    fn add(self, o: TelemetrySnapshot) -> TelemetrySnapshot {
        TelemetrySnapshot {
            gen_calls: self.gen_calls + o.gen_calls,
            embed_calls: self.embed_calls + o.embed_calls,
            tokens_in: self.tokens_in + o.tokens_in,
            tokens_out: self.tokens_out + o.tokens_out,
        }
    }
}

fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Counts calls flowing through a generator.
pub struct Metered<'a, B: ?Sized> {
    inner: &'a B,
    telemetry: &'a CallTelemetry,
}

impl<'a, B: ?Sized> Metered<'a, B> {
    pub fn new(inner: &'a B, telemetry: &'a CallTelemetry) -> Self {
        Metered { inner, telemetry }
    }
}

impl<B: TextGenerator + ?Sized> TextGenerator for Metered<'_, B> {
    fn generate(&self, req: &GenRequest) -> Result<String> {
        let t = self.telemetry;
        t.gen_calls.fetch_add(1, Ordering::Relaxed);
        t.tokens_in.fetch_add(approx_tokens(&req.prompt), Ordering::Relaxed);
        let out = self.inner.generate(req)?;
        t.tokens_out.fetch_add(approx_tokens(&out), Ordering::Relaxed);
        Ok(out)
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

impl<B: Embedder + ?Sized> Embedder for Metered<'_, B> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let t = self.telemetry;
        t.embed_calls.fetch_add(1, Ordering::Relaxed);
        t.tokens_in.fetch_add(texts.iter().map(|s| approx_tokens(s)).sum(), Ordering::Relaxed);
        self.inner.embed(texts)
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(GenRequest::new("p", 1).validate().is_ok());
        assert!(GenRequest::new("p", 0).validate().is_err());
        assert!(GenRequest::new("p", 5).with_temperature(-0.1).validate().is_err());
        assert!(GenRequest::new("p", 5).with_stop(["a", "b", "c", "d", "e"]).validate().is_err());
    }

    #[test]
    fn metered_counts_every_call() {
        let gen = ScriptedGenerator::new(vec![ScriptRule::substring("hi", "hello there")]).unwrap();
        let emb = HashingEmbedder::default();
        let tel = CallTelemetry::default();
        let mg = Metered::new(&gen, &tel);
        let me = Metered::new(&emb, &tel);
        mg.generate(&GenRequest::new("hi you", 8)).unwrap();
        assert!(mg.generate(&GenRequest::new("other", 8)).is_err());
        me.embed(&["a b", "c"]).unwrap();
        let s = tel.snapshot();
        assert_eq!((s.gen_calls, s.embed_calls), (2, 1));
        assert_eq!(s.tokens_out, 2);
        assert_eq!(s.tokens_in, 2 + 1 + 3);
    }
}
