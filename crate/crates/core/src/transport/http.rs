use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, ChatRequest, EmbeddingRequest, TransportError, API_KEY_ENV};

/// OpenAI-compatible HTTPS backend (`/chat/completions`, `/embeddings`).
pub struct OpenAiBackend {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl OpenAiBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Build from `SYNTHPSYCH_API_KEY`.
    pub fn from_env(base_url: impl Into<String>, timeout: Duration) -> Result<Self, TransportError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(TransportError::MissingCredential)?;
        Ok(Self::new(base_url, key, timeout))
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}/{}", self.base_url, path);
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(classify)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("bad JSON: {e}"))),
            429 | 500..=599 => Err(BackendError::Transport(format!("HTTP {status}: {text}"))),
            _ => Err(BackendError::Fatal(format!("HTTP {status}: {text}"))),
        }
    }
}

fn classify(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed
        | ureq::Error::BodyStalled => BackendError::Transport(err.to_string()),
        other => BackendError::Fatal(other.to_string()),
    }
}

impl Backend for OpenAiBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": req.model_id,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let value = self.post("chat/completions", &body)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response has no message content".into()))
    }

    fn embed(&self, req: &EmbeddingRequest) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({
            "model": req.model_id,
            "input": req.input,
            "dimensions": req.dimensions,
        });
        let value = self.post("embeddings", &body)?;
        let data = value["data"]
            .as_array()
            .ok_or_else(|| BackendError::Fatal("response has no data array".into()))?;
        let mut rows: Vec<(u64, Vec<f64>)> = data
            .iter()
            .map(|item| {
                let index = item["index"].as_u64().unwrap_or(0);
                let values = item["embedding"]
                    .as_array()
                    .ok_or_else(|| BackendError::Fatal("embedding is not an array".into()))?
                    .iter()
                    .map(|v| v.as_f64().ok_or_else(|| BackendError::Fatal("non-numeric embedding".into())))
                    .collect::<Result<Vec<f64>, _>>()?;
                Ok((index, values))
            })
            .collect::<Result<_, BackendError>>()?;
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}
