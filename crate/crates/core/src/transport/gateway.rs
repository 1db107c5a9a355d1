use std::sync::Arc;
use std::time::Duration;

use super::{
    Backend, BackendError, ChatClient, ChatRequest, ChatResponse, EmbeddingClient, EmbeddingRequest,
    EmbeddingVector, ResponseSource, TranscriptMode, TranscriptStore, TransportError,
};

/// Exponential backoff for transport-level failures only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, TransportError> {
        let mut wait = self.initial_backoff;
        let attempts = self.attempts.max(1);
        for attempt in 1..=attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(BackendError::Fatal(msg)) => return Err(TransportError::Provider(msg)),
                Err(BackendError::Transport(msg)) => {
                    if attempt == attempts {
                        return Err(TransportError::NetworkFailure {
                            attempts,
                            message: msg,
                        });
                    }
                    log::warn!("transport failure (attempt {attempt}/{attempts}): {msg}; retrying in {wait:?}");
                    std::thread::sleep(wait);
                    wait = wait.mul_f64(self.multiplier);
                }
            }
        }
        unreachable!("loop returns on the last attempt")
    }
}

/// Routes requests through the transcript store and, outside replay mode,
/// the live backend.
pub struct Gateway {
    store: TranscriptStore,
    backend: Option<Arc<dyn Backend>>,
    retry: RetryPolicy,
    concurrency: usize,
    embed_batch: usize,
    embedding_dim: usize,
}

impl Gateway {
    pub fn new(store: TranscriptStore, backend: Option<Arc<dyn Backend>>) -> Self {
        Self {
            store,
            backend,
            retry: RetryPolicy::default(),
            concurrency: 4,
            embed_batch: 64,
            embedding_dim: 1536,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, concurrency: usize) -> Self {
        self.concurrency = concurrency.max(1);
        self
    }

    pub fn with_embedding(mut self, dim: usize, batch: usize) -> Self {
        self.embedding_dim = dim;
        self.embed_batch = batch.max(1);
        self
    }

    pub fn store(&self) -> &TranscriptStore {
        &self.store
    }

    fn backend(&self) -> Result<&dyn Backend, TransportError> {
        self.backend.as_deref().ok_or(TransportError::MissingCredential)
    }

    /// Look up or fetch the response text for `digest`.
    fn resolve(
        &self,
        digest: &str,
        request: impl FnOnce() -> serde_json::Value,
        fetch: impl FnOnce(&dyn Backend) -> Result<String, TransportError>,
    ) -> Result<(String, ResponseSource), TransportError> {
        match self.store.mode() {
            TranscriptMode::Replay => self
                .store
                .get(digest)
                .map(|text| (text, ResponseSource::Replay))
                .ok_or_else(|| TransportError::ReplayMiss {
                    digest: digest.to_string(),
                }),
            TranscriptMode::Record => {
                let text = fetch(self.backend()?)?;
                self.store.insert(digest, request(), &text)?;
                Ok((text, ResponseSource::Live))
            }
            TranscriptMode::Passthrough => Ok((fetch(self.backend()?)?, ResponseSource::Live)),
        }
    }
}

impl ChatClient for Gateway {
    fn chat_complete(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError> {
        req.validate()?;
        let digest = req.digest();
        let (text, source) = self.resolve(
            &digest,
            || serde_json::to_value(req).expect("request serializes"),
            |backend| self.retry.run(|| backend.chat(req)),
        )?;
        Ok(ChatResponse {
            text,
            request_digest: digest,
            source,
        })
    }

    fn max_in_flight(&self) -> usize {
        self.concurrency
    }
}

impl EmbeddingClient for Gateway {
    fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<EmbeddingVector>, TransportError> {
        if texts.is_empty() {
            return Err(TransportError::InvalidInput("no texts to embed".into()));
        }
        let chunks: Vec<&[String]> = texts.chunks(self.embed_batch).collect();
        let results = super::map_bounded(&chunks, self.concurrency, |_, chunk| {
            let req = EmbeddingRequest {
                model_id: model_id.to_string(),
                input: chunk.to_vec(),
                dimensions: self.embedding_dim,
            };
            let digest = req.digest();
            let (text, _) = self.resolve(
                &digest,
                || serde_json::to_value(&req).expect("request serializes"),
                |backend| {
                    let vectors = self.retry.run(|| backend.embed(&req))?;
                    serde_json::to_string(&vectors).map_err(|e| TransportError::Decode(e.to_string()))
                },
            )?;
            let vectors: Vec<Vec<f64>> =
                serde_json::from_str(&text).map_err(|e| TransportError::Decode(e.to_string()))?;
            if vectors.len() != chunk.len() {
                return Err(TransportError::Decode(format!(
                    "{} vectors for {} inputs",
                    vectors.len(),
                    chunk.len()
                )));
            }
            Ok(vectors)
        });

        let mut out = Vec::with_capacity(texts.len());
        let mut dim: Option<usize> = None;
        for chunk in results {
            for values in chunk? {
                if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                    return Err(TransportError::Decode(format!("non-finite embedding value {bad}")));
                }
                let expected = *dim.get_or_insert(values.len());
                if values.len() != expected || expected == 0 {
                    return Err(TransportError::DimensionMismatch {
                        expected,
                        got: values.len(),
                    });
                }
                out.push(EmbeddingVector {
                    subject_id: out.len(),
                    values,
                });
            }
        }
        Ok(out)
    }
}
