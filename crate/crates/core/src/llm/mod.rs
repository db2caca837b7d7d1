//! Chat-completion contract, prompt rendering and structured-output parsing.

mod parse;
mod remote;
mod scripted;
mod template;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Result};

pub use parse::{
    parse_instance_lines, parse_lines, parse_triplet_lines, parse_yes_no, strip_code_fence,
    LineParse, YesNoError,
};
pub use remote::{OpenAiChatBackend, OpenAiChatConfig};
pub use scripted::{load_script, ScriptRule, ScriptedBackend};
pub use template::{PromptTemplate, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub max_context_tokens: usize,
    pub supports_system_message: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    /// Name of the template the prompt was rendered from.
    pub template: String,
    pub prompt: String,
    pub params: ChatParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Set when the backend stopped because it hit `max_tokens`.
    pub truncated: bool,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

/// A chat-completion backend. `send` is a single attempt; retries live in [`complete`].
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    fn send(&self, request: &ChatRequest) -> std::result::Result<Completion, BackendError>;
}

/// Whitespace word count, the token estimate used for capacity checks and telemetry.
pub fn estimate_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_delay_ms: 250,
        }
    }
}

/// Sends `request`, retrying transport and rate-limit failures with exponential backoff.
///
/// Prompts that exceed the backend's context capacity fail before any call.
pub fn complete(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    retry: RetryPolicy,
) -> std::result::Result<Completion, BackendError> {
    let prompt_tokens = estimate_tokens(&request.prompt);
    let max_tokens = backend.capabilities().max_context_tokens;
    if prompt_tokens > max_tokens {
        return Err(BackendError::ContextOverflow {
            prompt_tokens,
            max_tokens,
        });
    }
    let mut attempt = 0;
    loop {
        match backend.send(request) {
            Ok(c) => return Ok(c),
            Err(e) if e.is_retryable() && attempt < retry.max_retries => {
                let delay = retry.base_delay_ms.saturating_mul(1 << attempt.min(16));
                log::warn!(
                    "{} attempt {} failed ({e}); retrying in {delay} ms",
                    backend.id(),
                    attempt + 1
                );
                if delay > 0 {
                    thread::sleep(Duration::from_millis(delay));
                }
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Backend plus templates: renders a named template and completes it.
#[derive(Clone)]
pub struct LlmGateway {
    pub backend: Arc<dyn ChatBackend>,
    pub templates: TemplateSet,
    pub retry: RetryPolicy,
    pub seed: Option<u64>,
}

impl LlmGateway {
    pub fn new(backend: Arc<dyn ChatBackend>, templates: TemplateSet) -> Self {
        Self {
            backend,
            templates,
            retry: RetryPolicy::default(),
            seed: None,
        }
    }

    pub fn render(&self, template: &str, values: &[(&str, &str)]) -> Result<String> {
        self.templates.get(template)?.render(values)
    }

    pub fn ask(&self, template: &str, values: &[(&str, &str)]) -> Result<Completion> {
        let t = self.templates.get(template)?;
        let request = ChatRequest {
            template: t.name.clone(),
            prompt: t.render(values)?,
            params: ChatParams {
                temperature: t.temperature,
                max_tokens: t.max_tokens,
                seed: self.seed,
            },
        };
        let completion = complete(self.backend.as_ref(), &request, self.retry)?;
        if completion.truncated {
            log::warn!("{template}: completion truncated at {} tokens", t.max_tokens);
        }
        Ok(completion)
    }
}
