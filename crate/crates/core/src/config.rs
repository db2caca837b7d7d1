//! Pipeline configuration: one TOML document, flags applied on top.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, HashedNgramEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use crate::error::{Error, Result};
use crate::llm::{
    load_script, ChatBackend, LlmGateway, OpenAiChatBackend, OpenAiChatConfig, RetryPolicy,
    TemplateSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatProvider {
    Scripted,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub provider: ChatProvider,
    /// Script for the scripted provider, relative to the config file.
    pub script: Option<PathBuf>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub max_context_tokens: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    /// Upper bound on concurrent requests issued by one stage.
    pub max_in_flight: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            provider: ChatProvider::Scripted,
            script: None,
            base_url: None,
            model: None,
            api_key_env: None,
            max_context_tokens: 8192,
            timeout_secs: 60,
            max_retries: 2,
            base_delay_ms: 250,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingProvider {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingProvider,
    pub dim: usize,
    pub url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub batch_size: usize,
    pub timeout_secs: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingProvider::Local,
            dim: 256,
            url: None,
            model: None,
            api_key_env: None,
            batch_size: 32,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianConfig {
    pub ridge: f64,
    pub max_dim: usize,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-4,
            max_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionConfig {
    /// Fraction of KG points, by descending priority, considered for promotion.
    pub select_fraction: f64,
    /// Absolute priority cut; replaces `select_fraction` when set.
    pub threshold: Option<f64>,
    /// Number of clusters; `ceil(sqrt(selected / 2))` when unset.
    pub clusters: Option<usize>,
    pub max_iterations: usize,
    pub refit_each_iteration: bool,
    pub auto_accept: bool,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            select_fraction: 0.2,
            threshold: None,
            clusters: None,
            max_iterations: 2,
            refit_each_iteration: true,
            auto_accept: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CondensationConfig {
    pub k_neighbors: usize,
}

impl Default for CondensationConfig {
    fn default() -> Self {
        Self { k_neighbors: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    pub kg_top_k: usize,
    pub text_top_k: usize,
    /// Ontology rows passed to synthesis at most.
    pub max_ontology_rows: usize,
    pub abstention: String,
    /// Appended to synthesis prompts through their `{format}` slot.
    pub answer_format: String,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            kg_top_k: 10,
            text_top_k: 5,
            max_ontology_rows: 50,
            abstention: "I cannot answer this question from the available knowledge.".into(),
            answer_format: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Fills `{domain}` in prompts.
    pub domain: String,
    pub seed: u64,
    /// Record wall-clock stage times in build metadata (breaks byte reproducibility).
    pub record_wall_clock: bool,
    /// Directory of `*.tmpl` files overriding the shipped prompts.
    pub template_dir: Option<PathBuf>,
    pub llm: LlmConfig,
    pub embedding: EmbeddingConfig,
    pub gaussian: GaussianConfig,
    pub completion: CompletionConfig,
    pub condensation: CondensationConfig,
    pub query: QueryConfig,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            domain: "general".into(),
            seed: 42,
            record_wall_clock: false,
            template_dir: None,
            llm: LlmConfig::default(),
            embedding: EmbeddingConfig::default(),
            gaussian: GaussianConfig::default(),
            completion: CompletionConfig::default(),
            condensation: CondensationConfig::default(),
            query: QueryConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.query.kg_top_k >= 1, "query.kg_top_k must be at least 1"),
            (self.query.text_top_k >= 1, "query.text_top_k must be at least 1"),
            (self.condensation.k_neighbors >= 1, "condensation.k_neighbors must be at least 1"),
            (self.gaussian.ridge > 0.0 && self.gaussian.ridge.is_finite(), "gaussian.ridge must be positive"),
            (self.gaussian.max_dim >= 1, "gaussian.max_dim must be at least 1"),
            (self.embedding.dim >= 1, "embedding.dim must be at least 1"),
            (self.embedding.batch_size >= 1, "embedding.batch_size must be at least 1"),
            (self.llm.max_in_flight >= 1, "llm.max_in_flight must be at least 1"),
            (
                self.completion.select_fraction > 0.0 && self.completion.select_fraction <= 1.0,
                "completion.select_fraction must be in (0, 1]",
            ),
            (self.completion.clusters != Some(0), "completion.clusters must be at least 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config(msg.to_string())),
            None => Ok(()),
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Serialized form recorded in build metadata and reports.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or_default()
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.template_dir {
            Some(dir) => TemplateSet::with_overrides(&self.resolve(dir)),
            None => Ok(TemplateSet::builtin()),
        }
    }

    pub fn chat_backend(&self) -> Result<Arc<dyn ChatBackend>> {
        match self.llm.provider {
            ChatProvider::Scripted => {
                let script = self
                    .llm
                    .script
                    .as_ref()
                    .ok_or_else(|| Error::Config("llm.script is required for the scripted provider".into()))?;
                let backend = load_script(self.resolve(script))?
                    .with_max_context(self.llm.max_context_tokens);
                Ok(Arc::new(backend))
            }
            ChatProvider::Openai => {
                let base_url = self
                    .llm
                    .base_url
                    .clone()
                    .ok_or_else(|| Error::Config("llm.base_url is required".into()))?;
                let model = self
                    .llm
                    .model
                    .clone()
                    .ok_or_else(|| Error::Config("llm.model is required".into()))?;
                let backend = OpenAiChatBackend::new(OpenAiChatConfig {
                    base_url,
                    model,
                    api_key_env: self.llm.api_key_env.clone(),
                    max_context_tokens: self.llm.max_context_tokens,
                    timeout_secs: self.llm.timeout_secs,
                })?;
                Ok(Arc::new(backend))
            }
        }
    }

    pub fn gateway(&self) -> Result<LlmGateway> {
        let mut gateway = LlmGateway::new(self.chat_backend()?, self.templates()?);
        gateway.retry = RetryPolicy {
            max_retries: self.llm.max_retries,
            base_delay_ms: self.llm.base_delay_ms,
        };
        gateway.seed = Some(self.seed);
        Ok(gateway)
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        match self.embedding.provider {
            EmbeddingProvider::Local => Ok(Arc::new(HashedNgramEmbedder::new(
                self.embedding.dim,
                self.seed,
            ))),
            EmbeddingProvider::Remote => {
                let url = self
                    .embedding
                    .url
                    .clone()
                    .ok_or_else(|| Error::Config("embedding.url is required".into()))?;
                let model = self
                    .embedding
                    .model
                    .clone()
                    .ok_or_else(|| Error::Config("embedding.model is required".into()))?;
                let embedder = RemoteEmbedder::new(RemoteEmbedderConfig {
                    url,
                    model,
                    dim: self.embedding.dim,
                    batch_size: self.embedding.batch_size,
                    timeout_secs: self.embedding.timeout_secs,
                    api_key_env: self.embedding.api_key_env.clone(),
                })?;
                Ok(Arc::new(embedder))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retrieval_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.query.kg_top_k, 10);
        assert_eq!(c.query.text_top_k, 5);
        assert_eq!(c.condensation.k_neighbors, 10);
        assert_eq!(c.gaussian.ridge, 1e-4);
        assert_eq!(c.completion.max_iterations, 2);
        c.validate().unwrap();
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c = PipelineConfig::from_toml("domain = \"academic\"\n[query]\ntext_top_k = 3\n").unwrap();
        assert_eq!(c.domain, "academic");
        assert_eq!(c.query.text_top_k, 3);
        assert_eq!(c.query.kg_top_k, 10);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml("[query]\nkg_top_k = 0\n").is_err());
        assert!(PipelineConfig::from_toml("[gaussian]\nridge = 0.0\n").is_err());
        assert!(PipelineConfig::from_toml("unknown_key = 1\n").is_err());
    }
}
