use std::sync::{Arc, Mutex};

use async_trait::async_trait;

use super::{ChatRequest, EmbedRequest, LlmProvider, ProviderError};

/// One request as it left the pipeline.
#[derive(Debug, Clone)]
pub struct AuditRecord {
    pub on_behalf_of: Option<String>,
    pub template_id: String,
    /// The full serialized request.
    pub payload: String,
    /// Variable values or embedded texts, unescaped, one per line.
    pub text: String,
}

/// Passes requests through unchanged and keeps a copy of each one.
pub struct AuditingProvider {
    inner: Arc<dyn LlmProvider>,
    log: Mutex<Vec<AuditRecord>>,
}

impl AuditingProvider {
    pub fn new(inner: Arc<dyn LlmProvider>) -> Self {
        AuditingProvider {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.log.lock().expect("audit lock").clone()
    }
}

#[async_trait]
impl LlmProvider for AuditingProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.log.lock().expect("audit lock").push(AuditRecord {
            on_behalf_of: request.on_behalf_of.clone(),
            template_id: request.template_id.clone(),
            payload: serde_json::to_string(request).expect("request serializes"),
            text: request.variables.values().cloned().collect::<Vec<_>>().join("\n"),
        });
        self.inner.complete(request).await
    }

    async fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.log.lock().expect("audit lock").push(AuditRecord {
            on_behalf_of: request.on_behalf_of.clone(),
            template_id: "embed".into(),
            payload: serde_json::to_string(request).expect("request serializes"),
            text: request.texts.join("\n"),
        });
        self.inner.embed(request).await
    }
}
