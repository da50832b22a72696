//! Deterministic replay and recording providers.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde_json::Value;

use super::transcript::{RecordedResponse, Transcript, TranscriptEntry};
use super::{embed_fingerprint, ChatRequest, EmbedRequest, LlmProvider, ProviderError};

/// Answers requests from canned responses keyed by request fingerprint.
///
/// Per-template fallbacks can be registered for hand-built fixtures; an
/// exact fingerprint match always wins over a fallback.
#[derive(Debug, Default, Clone)]
pub struct ScriptedProvider {
    by_fingerprint: HashMap<String, RecordedResponse>,
    by_template: HashMap<String, String>,
    by_text: HashMap<String, Vec<f64>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_transcript(transcript: &Transcript) -> Self {
        let mut provider = Self::new();
        for entry in &transcript.entries {
            provider
                .by_fingerprint
                .entry(entry.fingerprint.clone())
                .or_insert_with(|| entry.response.clone());
        }
        provider
    }

    pub fn with_completion(mut self, request: &ChatRequest, completion: impl Into<String>) -> Self {
        self.by_fingerprint
            .insert(request.fingerprint(), RecordedResponse::Completion(completion.into()));
        self
    }

    /// Fixed reply for every request against `template_id`.
    pub fn with_template(mut self, template_id: &str, completion: impl Into<String>) -> Self {
        self.by_template.insert(template_id.to_string(), completion.into());
        self
    }

    pub fn with_embedding(mut self, text: &str, vector: Vec<f64>) -> Self {
        self.by_text.insert(embed_fingerprint(text), vector);
        self
    }

    pub fn len(&self) -> usize {
        self.by_fingerprint.len() + self.by_template.len() + self.by_text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[async_trait]
impl LlmProvider for ScriptedProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let fingerprint = request.fingerprint();
        if let Some(RecordedResponse::Completion(text)) = self.by_fingerprint.get(&fingerprint) {
            return Ok(text.clone());
        }
        if let Some(text) = self.by_template.get(&request.template_id) {
            return Ok(text.clone());
        }
        Err(ProviderError::ScriptMiss {
            template_id: request.template_id.clone(),
            fingerprint,
        })
    }

    async fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
        request
            .texts
            .iter()
            .map(|text| {
                let fingerprint = embed_fingerprint(text);
                if let Some(v) = self.by_text.get(&fingerprint) {
                    return Ok(v.clone());
                }
                match self.by_fingerprint.get(&fingerprint) {
                    Some(RecordedResponse::Embedding(v)) => Ok(v.clone()),
                    _ => Err(ProviderError::ScriptMiss {
                        template_id: "embed".into(),
                        fingerprint,
                    }),
                }
            })
            .collect()
    }
}

/// Forwards to an inner provider and keeps every exchange for a transcript.
pub struct RecordingProvider {
    inner: Arc<dyn LlmProvider>,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn LlmProvider>) -> Self {
        RecordingProvider {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn transcript(&self, run: Value) -> Transcript {
        Transcript {
            run,
            entries: self.entries.lock().expect("recording lock").clone(),
        }
    }

    fn push(&self, entry: TranscriptEntry) {
        self.entries.lock().expect("recording lock").push(entry);
    }
}

#[async_trait]
impl LlmProvider for RecordingProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let reply = self.inner.complete(request).await?;
        self.push(TranscriptEntry {
            fingerprint: request.fingerprint(),
            template_id: request.template_id.clone(),
            request_digest: request.digest(),
            response: RecordedResponse::Completion(reply.clone()),
        });
        Ok(reply)
    }

    async fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
        let vectors = self.inner.embed(request).await?;
        for (text, vector) in request.texts.iter().zip(&vectors) {
            self.push(TranscriptEntry {
                fingerprint: embed_fingerprint(text),
                template_id: "embed".into(),
                request_digest: embed_fingerprint(text),
                response: RecordedResponse::Embedding(vector.clone()),
            });
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[tokio::test]
    async fn same_request_same_response() {
        let req = ChatRequest::structured("enact", "thought", 0.7).var("line", "hi");
        let p = ScriptedProvider::new().with_completion(&req, "{\"a\":1}");
        assert_eq!(p.complete(&req).await.unwrap(), p.complete(&req).await.unwrap());
    }

    #[tokio::test]
    async fn unknown_fingerprint_misses() {
        let p = ScriptedProvider::new();
        let req = ChatRequest::structured("enact", "thought", 0.7);
        assert!(matches!(p.complete(&req).await, Err(ProviderError::ScriptMiss { .. })));
        let err = p.embed(&EmbedRequest::new(vec!["x".into()])).await.unwrap_err();
        assert!(matches!(err, ProviderError::ScriptMiss { .. }));
    }

    #[tokio::test]
    async fn record_then_replay_matches() {
        let base = Arc::new(
            ScriptedProvider::new()
                .with_template("enact", "{\"ok\":true}")
                .with_embedding("a", vec![1.0, 0.0])
                .with_embedding("b", vec![0.0, 1.0]),
        );
        let recorder = RecordingProvider::new(base);
        let req = ChatRequest::structured("enact", "thought", 0.7).var("line", "one");
        let live_reply = recorder.complete(&req).await.unwrap();
        let live_vectors = recorder
            .embed(&EmbedRequest::new(vec!["a".into(), "b".into()]))
            .await
            .unwrap();

        let text = recorder.transcript(json!({})).to_jsonl();
        let replay = ScriptedProvider::from_transcript(&Transcript::from_jsonl(&text).unwrap());
        assert_eq!(replay.complete(&req).await.unwrap(), live_reply);
        let vectors = replay
            .embed(&EmbedRequest::new(vec!["a".into(), "b".into()]))
            .await
            .unwrap();
        assert_eq!(vectors, live_vectors);
    }
}
