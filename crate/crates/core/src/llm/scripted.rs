use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use regex::Regex;
use serde::Deserialize;

use super::{estimate_tokens, Capabilities, ChatBackend, ChatRequest, Completion};
use crate::error::{BackendError, Error, Result};

/// One scripted response. The first rule whose template and matcher accept a
/// request wins.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    /// Template name this rule applies to; any template when absent.
    #[serde(default)]
    pub template: Option<String>,
    /// Substring the rendered prompt must contain.
    #[serde(default, rename = "match")]
    pub contains: Option<String>,
    /// Regex the rendered prompt must match. Named and numbered groups can be
    /// referenced from `response` as `$name` / `${name}`.
    #[serde(default)]
    pub regex: Option<String>,
    #[serde(default)]
    pub response: Option<String>,
    /// Reply with the rendered prompt itself.
    #[serde(default)]
    pub echo: bool,
    /// Fail with this error class instead: `transport`, `rate_limit` or `protocol`.
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Rules(Vec<ScriptRule>),
    Full {
        rules: Vec<ScriptRule>,
        #[serde(default)]
        default: Option<String>,
    },
}

struct CompiledRule {
    rule: ScriptRule,
    regex: Option<Regex>,
}

/// Deterministic offline backend driven by an ordered rule list.
pub struct ScriptedBackend {
    id: String,
    rules: Vec<CompiledRule>,
    default: Option<String>,
    max_context_tokens: usize,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>, default: Option<String>) -> Result<Self> {
        let rules = rules
            .into_iter()
            .enumerate()
            .map(|(i, rule)| {
                if rule.response.is_none() && !rule.echo && rule.error.is_none() {
                    return Err(Error::Config(format!(
                        "script rule {i} has no response, echo or error"
                    )));
                }
                let regex = rule
                    .regex
                    .as_deref()
                    .map(Regex::new)
                    .transpose()
                    .map_err(|e| Error::Config(format!("script rule {i}: {e}")))?;
                Ok(CompiledRule { rule, regex })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: "scripted".into(),
            rules,
            default,
            max_context_tokens: 100_000,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        match serde_json::from_str(text).map_err(|e| Error::Config(format!("script: {e}")))? {
            ScriptFile::Rules(rules) => Self::new(rules, None),
            ScriptFile::Full { rules, default } => Self::new(rules, default),
        }
    }

    pub fn with_max_context(mut self, tokens: usize) -> Self {
        self.max_context_tokens = tokens;
        self
    }

    /// Number of requests answered so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn respond(&self, request: &ChatRequest) -> std::result::Result<String, BackendError> {
        for compiled in &self.rules {
            let rule = &compiled.rule;
            if rule.template.as_deref().is_some_and(|t| t != request.template) {
                continue;
            }
            if rule
                .contains
                .as_deref()
                .is_some_and(|s| !request.prompt.contains(s))
            {
                continue;
            }
            let captures = match &compiled.regex {
                Some(re) => match re.captures(&request.prompt) {
                    Some(c) => Some(c),
                    None => continue,
                },
                None => None,
            };
            if let Some(kind) = &rule.error {
                return Err(match kind.as_str() {
                    "transport" => BackendError::Transport("scripted failure".into()),
                    "rate_limit" => BackendError::RateLimited("scripted failure".into()),
                    _ => BackendError::Protocol("scripted failure".into()),
                });
            }
            if rule.echo {
                return Ok(request.prompt.clone());
            }
            let response = rule.response.as_deref().unwrap_or_default();
            return Ok(match captures {
                Some(caps) => {
                    let mut out = String::new();
                    caps.expand(response, &mut out);
                    out
                }
                None => response.to_string(),
            });
        }
        self.default
            .clone()
            .ok_or_else(|| BackendError::NoScriptedResponse {
                template: request.template.clone(),
            })
    }
}

/// Loads a script file (a JSON rule list, or `{rules, default}`).
pub fn load_script(path: impl AsRef<Path>) -> Result<ScriptedBackend> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScriptedBackend::from_json(&text)
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_context_tokens: self.max_context_tokens,
            supports_system_message: false,
        }
    }

    fn send(&self, request: &ChatRequest) -> std::result::Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = self.respond(request)?;
        Ok(Completion {
            prompt_tokens: estimate_tokens(&request.prompt),
            completion_tokens: estimate_tokens(&text),
            text,
            truncated: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatParams;

    fn req(template: &str, prompt: &str) -> ChatRequest {
        ChatRequest {
            template: template.into(),
            prompt: prompt.into(),
            params: ChatParams {
                temperature: 0.0,
                max_tokens: 64,
                seed: None,
            },
        }
    }

    #[test]
    fn first_rule_wins() {
        let b = ScriptedBackend::from_json(
            r#"[
                {"template": "a", "match": "alpha", "response": "one"},
                {"match": "alpha", "response": "two"},
                {"template": "b", "regex": "id=(?P<id>\\d+)", "response": "got ${id}"}
            ]"#,
        )
        .unwrap();
        assert_eq!(b.send(&req("a", "x alpha")).unwrap().text, "one");
        assert_eq!(b.send(&req("b", "x alpha")).unwrap().text, "two");
        assert_eq!(b.send(&req("b", "id=42")).unwrap().text, "got 42");
        assert!(matches!(
            b.send(&req("c", "nothing")),
            Err(BackendError::NoScriptedResponse { .. })
        ));
        assert_eq!(b.calls(), 4);
    }

    #[test]
    fn default_echo_and_errors() {
        let b = ScriptedBackend::from_json(
            r#"{"rules": [
                {"match": "echo me", "echo": true},
                {"match": "fail", "error": "transport"}
            ], "default": "fallback"}"#,
        )
        .unwrap();
        assert_eq!(b.send(&req("t", "please echo me")).unwrap().text, "please echo me");
        assert!(b.send(&req("t", "fail now")).unwrap_err().is_retryable());
        assert_eq!(b.send(&req("t", "other")).unwrap().text, "fallback");
    }

    #[test]
    fn rule_without_output_rejected() {
        assert!(ScriptedBackend::from_json(r#"[{"match": "x"}]"#).is_err());
    }
}
