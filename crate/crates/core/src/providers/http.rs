//! OpenAI-compatible HTTP clients.
//!
//! Chat goes to `POST {endpoint}/chat/completions`, embeddings to
//! `POST {endpoint}/embeddings`. Evidence scorers use a small JSON protocol:
//! `POST {endpoint}/score` with `{"model","sentence","document"}` answered by
//! `{"score": <real>}`.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tracing::warn;

use super::{ChatModel, ChatTurn, Embedder, ProviderConfig, SupportScorer};
use crate::domain::EmbeddingVec;
use crate::error::{Error, Result};

struct Transport {
    client: Client,
    cfg: ProviderConfig,
    api_key: Option<String>,
}

impl Transport {
    fn new(cfg: ProviderConfig) -> Result<Self> {
        cfg.validate()?;
        let client = Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::ProviderUnavailable(format!("building HTTP client: {e}")))?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Transport {
            client,
            cfg,
            api_key,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.endpoint_url.trim_end_matches('/'), path)
    }

    /// POSTs `body`, retrying transport errors, 429 and 5xx responses with a
    /// fixed backoff. Other 4xx responses fail immediately.
    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = self.url(path);
        let attempts = self.cfg.max_retries + 1;
        let mut last_err = String::new();
        for attempt in 1..=attempts {
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<Value>().map_err(|e| {
                            Error::ProviderUnavailable(format!("{url}: invalid JSON body: {e}"))
                        });
                    }
                    let text = resp.text().unwrap_or_default();
                    last_err = format!("{url}: HTTP {status}: {}", text.trim());
                    if !(status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS) {
                        return Err(Error::ProviderUnavailable(last_err));
                    }
                }
                Err(e) => last_err = format!("{url}: {e}"),
            }
            if attempt < attempts {
                warn!(attempt, %last_err, "provider call failed, retrying");
                thread::sleep(Duration::from_millis(self.cfg.retry_backoff_ms));
            }
        }
        Err(Error::ProviderUnavailable(format!(
            "{last_err} (gave up after {attempts} attempts)"
        )))
    }
}

/// Chat client for `/chat/completions`.
pub struct HttpChat {
    transport: Transport,
}

impl HttpChat {
    pub fn new(cfg: ProviderConfig) -> Result<Self> {
        Ok(HttpChat {
            transport: Transport::new(cfg)?,
        })
    }

    /// Request body for `history`. Turns with an image reference carry it
    /// as an `image_url` content part after the text part.
    pub fn request_body(&self, history: &[ChatTurn]) -> Value {
        chat_request_body(&self.transport.cfg, history)
    }
}

pub(crate) fn chat_request_body(cfg: &ProviderConfig, history: &[ChatTurn]) -> Value {
    let messages: Vec<Value> = history
        .iter()
        .map(|t| {
            let content = match &t.image_ref {
                Some(r) => json!([
                    {"type": "text", "text": t.content},
                    {"type": "image_url", "image_url": {"url": r}}
                ]),
                None => json!(t.content),
            };
            json!({"role": t.role, "content": content})
        })
        .collect();
    json!({
        "model": cfg.model_name,
        "messages": messages,
        "temperature": cfg.temperature,
    })
}

impl ChatModel for HttpChat {
    fn model_name(&self) -> &str {
        &self.transport.cfg.model_name
    }

    fn complete(&self, history: &[ChatTurn]) -> Result<String> {
        let resp = self
            .transport
            .post("chat/completions", &self.request_body(history))?;
        let content = &resp["choices"][0]["message"]["content"];
        match content {
            Value::String(s) => Ok(s.clone()),
            Value::Null => Err(Error::EmptyResponse(format!(
                "model '{}' returned no message content",
                self.model_name()
            ))),
            other => Err(Error::ProviderUnavailable(format!(
                "unexpected message content: {other}"
            ))),
        }
    }
}

/// Embedding client for `/embeddings`. The profile dimension must be
/// configured and every returned vector must match it.
pub struct HttpEmbedder {
    transport: Transport,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(cfg: ProviderConfig) -> Result<Self> {
        let dim = cfg.dimension.ok_or_else(|| {
            Error::invalid(format!(
                "embedding profile '{}' needs a configured dimension",
                cfg.model_name
            ))
        })?;
        Ok(HttpEmbedder {
            transport: Transport::new(cfg)?,
            dim,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVec>> {
        let body = json!({"model": self.transport.cfg.model_name, "input": texts});
        let resp = self.transport.post("embeddings", &body)?;
        let data = resp["data"]
            .as_array()
            .ok_or_else(|| Error::ProviderUnavailable("embedding response lacks 'data'".into()))?;
        let mut rows: Vec<(usize, EmbeddingVec)> = data
            .iter()
            .enumerate()
            .map(|(pos, item)| {
                let index = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
                let values: Vec<f64> = item["embedding"]
                    .as_array()
                    .ok_or_else(|| {
                        Error::ProviderUnavailable("embedding item lacks 'embedding'".into())
                    })?
                    .iter()
                    .map(|v| {
                        v.as_f64().ok_or_else(|| {
                            Error::ProviderUnavailable("non-numeric embedding entry".into())
                        })
                    })
                    .collect::<Result<_>>()?;
                let vec = EmbeddingVec::new(values)
                    .map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
                Ok((index, vec))
            })
            .collect::<Result<_>>()?;
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

/// Evidence scorer served over HTTP.
pub struct HttpScorer {
    transport: Transport,
}

impl HttpScorer {
    pub fn new(cfg: ProviderConfig) -> Result<Self> {
        Ok(HttpScorer {
            transport: Transport::new(cfg)?,
        })
    }
}

impl SupportScorer for HttpScorer {
    fn raw_score(&self, sentence: &str, document: &str) -> Result<f64> {
        let body = json!({
            "model": self.transport.cfg.model_name,
            "sentence": sentence,
            "document": document,
        });
        let resp = self.transport.post("score", &body)?;
        resp["score"]
            .as_f64()
            .ok_or_else(|| Error::ProviderUnavailable("score response lacks 'score'".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_body_shape() {
        let cfg = ProviderConfig::new("http://localhost:1", "gpt-test");
        let history = vec![
            ChatTurn::user("News text\n\nPlease analyze.").with_image(Some("img/1.jpg".into())),
            ChatTurn::assistant("Analysis."),
            ChatTurn::user("Judge."),
        ];
        let body = chat_request_body(&cfg, &history);
        assert_eq!(body["model"], "gpt-test");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"][0]["type"], "text");
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "img/1.jpg");
        assert_eq!(body["messages"][1]["role"], "assistant");
        assert_eq!(body["messages"][2]["content"], "Judge.");
    }

    #[test]
    fn embedder_needs_dimension() {
        let cfg = ProviderConfig::new("http://localhost:1", "mpnet");
        assert!(matches!(HttpEmbedder::new(cfg), Err(Error::InvalidArgument(_))));
    }
}
