use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, Capabilities, ChatBackend, ChatRequest, Completion};
use crate::error::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiChatConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_context")]
    pub max_context_tokens: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_context() -> usize {
    8192
}

fn default_timeout() -> u64 {
    60
}

/// Backend for any server speaking the OpenAI-compatible chat-completions shape.
pub struct OpenAiChatBackend {
    config: OpenAiChatConfig,
    id: String,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: usize,
    completion_tokens: usize,
}

#[derive(Deserialize)]
struct ResponseBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

impl OpenAiChatBackend {
    pub fn new(config: OpenAiChatConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        Ok(Self {
            id: format!("openai-compatible:{}", config.model),
            config,
            client,
            api_key,
        })
    }
}

impl ChatBackend for OpenAiChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_context_tokens: self.config.max_context_tokens,
            supports_system_message: true,
        }
    }

    fn send(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = RequestBody {
            model: &self.config.model,
            messages: [Message {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.params.temperature,
            max_tokens: request.params.max_tokens,
            seed: request.params.seed,
        };
        let mut http = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http
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
            let detail = response.text().unwrap_or_default();
            if detail.contains("context_length") || detail.contains("maximum context") {
                return Err(BackendError::ContextOverflow {
                    prompt_tokens: estimate_tokens(&request.prompt),
                    max_tokens: self.config.max_context_tokens,
                });
            }
            return Err(BackendError::Protocol(format!("{status}: {detail}")));
        }
        let body: ResponseBody = response
            .json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        let choice = body
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        let text = choice.message.content.unwrap_or_default();
        let (prompt_tokens, completion_tokens) = match body.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (estimate_tokens(&request.prompt), estimate_tokens(&text)),
        };
        Ok(Completion {
            truncated: choice.finish_reason.as_deref() == Some("length"),
            text,
            prompt_tokens,
            completion_tokens,
        })
    }
}
