//! Interfaces to the external neural services: a chat model, sentence
//! embedders and the two evidence scorers used by the factuality filter.
//!
//! Every service has an HTTP client ([`http`]) and a deterministic offline
//! mock ([`mock`]). All implementations are `Send + Sync` and hold no
//! mutable state between calls, so one handle can serve many workers.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};

use crate::domain::EmbeddingVec;
use crate::error::{Error, Result};

pub use http::{HttpChat, HttpEmbedder, HttpScorer};
pub use mock::{MockChat, MockEmbedder, MockStance, MockSummary, CREDIBLE_CUES, SENSATIONAL_CUES};

/// Default environment variable holding the API key for HTTP providers.
pub const DEFAULT_API_KEY_ENV: &str = "MMD_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    /// Image reference attached to this turn, sent as an extra content part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl ChatTurn {
    pub fn user(content: impl Into<String>) -> Self {
        ChatTurn {
            role: Role::User,
            content: content.into(),
            image_ref: None,
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatTurn {
            role: Role::Assistant,
            content: content.into(),
            image_ref: None,
        }
    }

    pub fn with_image(mut self, image_ref: Option<String>) -> Self {
        self.image_ref = image_ref;
        self
    }
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

/// Connection settings for one HTTP-backed service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Sampling temperature; 0 keeps generation deterministic.
    #[serde(default)]
    pub temperature: f64,
    /// Retries after the first failed attempt.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Embedding dimension, required for embedding profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
}

impl ProviderConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        ProviderConfig {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            timeout_ms: default_timeout_ms(),
            temperature: 0.0,
            max_retries: default_max_retries(),
            retry_backoff_ms: default_backoff_ms(),
            api_key_env: default_api_key_env(),
            dimension: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::invalid("timeout_ms must be positive"));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::invalid("temperature must be a nonnegative real"));
        }
        if self.dimension == Some(0) {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(())
    }
}

/// Conversational model that answers the last user turn.
pub trait ChatModel: Send + Sync {
    fn model_name(&self) -> &str;

    /// Backend call; callers go through [`ChatModel::chat_complete`].
    fn complete(&self, history: &[ChatTurn]) -> Result<String>;

    /// Checks the history shape, calls the backend and rejects blank output.
    fn chat_complete(&self, history: &[ChatTurn]) -> Result<String> {
        check_history(history)?;
        let out = self.complete(history)?;
        if out.trim().is_empty() {
            return Err(Error::EmptyResponse(format!(
                "model '{}' returned no text",
                self.model_name()
            )));
        }
        Ok(out)
    }
}

fn check_history(history: &[ChatTurn]) -> Result<()> {
    let last = history
        .last()
        .ok_or_else(|| Error::Precondition("chat history is empty".into()))?;
    if last.role != Role::User {
        return Err(Error::Precondition(
            "the last chat turn must come from the user".into(),
        ));
    }
    if let Some(i) = history
        .iter()
        .position(|t| t.role != Role::System && t.content.trim().is_empty())
    {
        return Err(Error::Precondition(format!("chat turn {i} has empty content")));
    }
    Ok(())
}

/// Sentence encoder with a fixed output dimension.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Backend call for a batch of nonempty texts.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVec>>;

    fn embed(&self, text: &str) -> Result<EmbeddingVec> {
        let mut out = self.embed_batch(&[text])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVec>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::invalid("cannot embed empty text"));
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.embed_texts(texts)?;
        if out.len() != texts.len() {
            return Err(Error::ProviderUnavailable(format!(
                "embedder returned {} vectors for {} inputs",
                out.len(),
                texts.len()
            )));
        }
        if let Some(v) = out.iter().find(|v| v.dim() != self.dim()) {
            return Err(Error::ProviderUnavailable(format!(
                "embedder returned dimension {} but profile is fixed at {}",
                v.dim(),
                self.dim()
            )));
        }
        Ok(out)
    }
}

/// Scores how well a document backs a sentence, in [0, 1]. Used for both the
/// stance classifier and the summarization-precision model.
pub trait SupportScorer: Send + Sync {
    fn raw_score(&self, sentence: &str, document: &str) -> Result<f64>;

    fn score(&self, sentence: &str, document: &str) -> Result<f64> {
        if sentence.trim().is_empty() || document.trim().is_empty() {
            return Err(Error::invalid("scorer inputs must be nonempty"));
        }
        let s = self.raw_score(sentence, document)?;
        if s.is_nan() {
            return Err(Error::ProviderUnavailable("scorer returned NaN".into()));
        }
        Ok(s.clamp(0.0, 1.0))
    }
}

/// The pair of scorers averaged by the factuality filter.
#[derive(Clone, Copy)]
pub struct EvidenceScorers<'a> {
    pub stance: &'a dyn SupportScorer,
    pub summary: &'a dyn SupportScorer,
}

impl<'a> EvidenceScorers<'a> {
    pub fn stance_score(&self, sentence: &str, document: &str) -> Result<f64> {
        self.stance.score(sentence, document)
    }

    pub fn summary_score(&self, sentence: &str, document: &str) -> Result<f64> {
        self.summary.score(sentence, document)
    }
}
