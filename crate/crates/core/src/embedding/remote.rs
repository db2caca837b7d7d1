use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Embedder;
use crate::error::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub url: String,
    pub model: String,
    pub dim: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Name of the environment variable holding a bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_batch() -> usize {
    32
}

fn default_timeout() -> u64 {
    30
}

/// HTTP embedding provider speaking the common `{model, input: [..]}` →
/// `{data: [{embedding: [..]}]}` request/response shape.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    id: String,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        Ok(Self {
            id: format!("remote:{}", config.model),
            config,
            client,
            api_key,
        })
    }

    fn post(&self, batch: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        let mut request = self.client.post(&self.config.url).json(&EmbeddingRequest {
            model: &self.config.model,
            input: batch,
        });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 {
            return Err(BackendError::RateLimited(status.to_string()));
        }
        if status.is_server_error() {
            return Err(BackendError::Transport(status.to_string()));
        }
        if !status.is_success() {
            return Err(BackendError::Protocol(status.to_string()));
        }
        let mut body: EmbeddingResponse = response
            .json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        if body.data.iter().all(|d| d.index.is_some()) {
            body.data.sort_by_key(|d| d.index);
        }
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.config.batch_size.max(1)) {
            let vectors = self.post(batch)?;
            if vectors.len() != batch.len() {
                return Err(BackendError::Protocol(format!(
                    "expected {} vectors, got {}",
                    batch.len(),
                    vectors.len()
                )));
            }
            out.extend(vectors);
        }
        Ok(out)
    }
}
