//! Chat-completions and embeddings clients over blocking HTTP.

use std::thread;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{check_embed_inputs, Embedder, GenRequest, TextGenerator};
use crate::error::{Error, Result};
use crate::EmbeddingVector;

/// Exponential backoff over transport errors, 429 and 5xx.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, initial_backoff: Duration::from_millis(500), timeout: Duration::from_secs(60) }
    }
}

enum Failure {
    Retryable(String),
    Terminal(Error),
}

fn post_with_retry(
    client: &Client,
    policy: &RetryPolicy,
    url: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
) -> Result<Response> {
    let mut backoff = policy.initial_backoff;
    let mut last = String::new();
    for attempt in 1..=policy.attempts.max(1) {
        let mut req = client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let outcome = match req.send() {
            Err(e) => Failure::Retryable(format!("transport error: {e}")),
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return Ok(resp);
                }
                let text = resp.text().unwrap_or_default();
                if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                    Failure::Retryable(format!("HTTP {status}: {text}"))
                } else {
                    Failure::Terminal(Error::BackendRefusal(format!("HTTP {status}: {text}")))
                }
            }
        };
        match outcome {
            Failure::Terminal(e) => return Err(e),
            Failure::Retryable(msg) => {
                log::warn!("{url}: attempt {attempt} failed: {msg}");
                last = msg;
                if attempt < policy.attempts {
                    thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
    Err(Error::BackendUnreachable(format!("{url} after {} attempts: {last}", policy.attempts)))
}

fn build_client(policy: &RetryPolicy) -> Result<Client> {
    Client::builder().timeout(policy.timeout).build().map_err(|e| Error::Config(format!("http client: {e}")))
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
    #[serde(default)]
    refusal: Option<String>,
}

pub struct HttpGenerator {
    client: Client,
    url: String,
    model: String,
    api_key: Option<String>,
    policy: RetryPolicy,
}

impl HttpGenerator {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        policy: RetryPolicy,
    ) -> Result<Self> {
        Ok(HttpGenerator { client: build_client(&policy)?, url: url.into(), model: model.into(), api_key, policy })
    }

    /// The request body sent for `req`.
    pub fn request_body(&self, req: &GenRequest) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "stop": req.stop,
        })
    }
}

impl TextGenerator for HttpGenerator {
    fn generate(&self, req: &GenRequest) -> Result<String> {
        req.validate()?;
        let resp =
            post_with_retry(&self.client, &self.policy, &self.url, self.api_key.as_deref(), &self.request_body(req))?;
        let parsed: ChatResponse =
            resp.json().map_err(|e| Error::BackendRefusal(format!("unparseable completion response: {e}")))?;
        let message = parsed.choices.into_iter().next().ok_or(Error::EmptyCompletion)?.message;
        if let Some(refusal) = message.refusal.filter(|r| !r.is_empty()) {
            return Err(Error::BackendRefusal(refusal));
        }
        match message.content {
            Some(text) if !text.trim().is_empty() => Ok(text),
            _ => Err(Error::EmptyCompletion),
        }
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

pub struct HttpEmbedder {
    client: Client,
    url: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    policy: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        dim: usize,
        api_key: Option<String>,
        policy: RetryPolicy,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embed.dim must be positive".into()));
        }
        Ok(HttpEmbedder { client: build_client(&policy)?, url: url.into(), model: model.into(), api_key, dim, policy })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        check_embed_inputs(texts)?;
        let body = json!({"model": self.model, "input": texts});
        let resp = post_with_retry(&self.client, &self.policy, &self.url, self.api_key.as_deref(), &body)?;
        let parsed: EmbeddingResponse =
            resp.json().map_err(|e| Error::BackendRefusal(format!("unparseable embedding response: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(Error::InvalidInput(format!(
                "endpoint returned {} embeddings for {} inputs",
                parsed.data.len(),
                texts.len()
            )));
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(Error::DimensionMismatch { expected: self.dim, got: d.embedding.len() });
                }
                EmbeddingVector::new(d.embedding)
            })
            .collect()
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}
