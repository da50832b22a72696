//! Chat-completion and embedding backends.
//!
//! Every pipeline stage talks to a model through [`LlmProvider`]. A request
//! names a prompt template and carries the template's variables; rendering
//! into chat messages is the concern of transports that actually speak to a
//! model ([`http::OpenAiCompatProvider`]). Test doubles key on the request
//! fingerprint instead ([`scripted::ScriptedProvider`]).

pub mod audit;
pub mod heuristic;
pub mod http;
pub mod scripted;
pub mod structured;
pub mod templates;
pub mod transcript;

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use structured::{complete_structured, complete_structured_with, StructuredOutput};

/// Temperature used for enactment and feedback generation.
pub const GENERATION_TEMPERATURE: f32 = 0.7;
/// Temperature used for evaluation and segmentation.
pub const DETERMINISTIC_TEMPERATURE: f32 = 0.0;

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("structured output for schema `{schema}` still invalid after {attempts} attempt(s): {last_error}")]
    Structure {
        schema: String,
        attempts: u32,
        last_error: String,
    },
    #[error("no scripted response for template `{template_id}` (fingerprint {fingerprint})")]
    ScriptMiss {
        template_id: String,
        fingerprint: String,
    },
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding backend returned {actual} vectors for {expected} inputs")]
    ArityMismatch { expected: usize, actual: usize },
    #[error("embedding backend returned a zero-length vector")]
    DegenerateEmbedding,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("template error: {0}")]
    Template(String),
}

/// One logical chat call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub template_id: String,
    pub variables: BTreeMap<String, String>,
    pub expects_structure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_id: Option<String>,
    pub temperature: f32,
    /// Character whose private context this request carries, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_behalf_of: Option<String>,
}

impl ChatRequest {
    pub fn structured(template_id: &str, schema_id: &str, temperature: f32) -> Self {
        ChatRequest {
            template_id: template_id.to_string(),
            variables: BTreeMap::new(),
            expects_structure: true,
            schema_id: Some(schema_id.to_string()),
            temperature,
            on_behalf_of: None,
        }
    }

    pub fn var(mut self, name: &str, value: impl Into<String>) -> Self {
        self.variables.insert(name.to_string(), value.into());
        self
    }

    pub fn on_behalf_of(mut self, agent: &str) -> Self {
        self.on_behalf_of = Some(agent.to_string());
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.expects_structure != self.schema_id.is_some() {
            return Err(ProviderError::InvalidRequest(
                "schema_id must be present exactly when structure is expected".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Stable key over the template id and whitespace-normalized variables.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"chat\0");
        hasher.update(self.template_id.as_bytes());
        for (name, value) in &self.variables {
            hasher.update(b"\0");
            hasher.update(name.as_bytes());
            hasher.update(b"=");
            hasher.update(collapse_whitespace(value).as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Exact digest of the full serialized request.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_behalf_of: Option<String>,
}

impl EmbedRequest {
    pub fn new(texts: Vec<String>) -> Self {
        EmbedRequest {
            texts,
            on_behalf_of: None,
        }
    }

    pub fn on_behalf_of(mut self, agent: Option<&str>) -> Self {
        self.on_behalf_of = agent.map(str::to_string);
        self
    }
}

/// Fingerprint of a single embedded text.
pub fn embed_fingerprint(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"embed\0");
    hasher.update(collapse_whitespace(text).as_bytes());
    hex::encode(hasher.finalize())
}

pub(crate) fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[async_trait]
pub trait LlmProvider: Send + Sync {
    /// Raw completion text for one request.
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;

    /// One vector per input text, in input order. Vectors are returned as the
    /// backend produced them; callers normalize.
    async fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[async_trait]
impl<P: LlmProvider + ?Sized> LlmProvider for std::sync::Arc<P> {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request).await
    }

    async fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed(request).await
    }
}

/// A reference to a secret held outside the configuration, never the secret
/// itself. Resolved from the environment at call time.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CredentialRef(pub String);

impl CredentialRef {
    pub fn resolve(&self) -> Option<Secret> {
        std::env::var(&self.0).ok().filter(|v| !v.is_empty()).map(Secret)
    }
}

impl std::fmt::Debug for CredentialRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CredentialRef(env:{})", self.0)
    }
}

pub struct Secret(String);

impl Secret {
    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Debug for Secret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Secret(***)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub credential: CredentialRef,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub embedding_model: String,
    pub embedding_dimension: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-4.1".into(),
            credential: CredentialRef("REHEARSAL_API_KEY".into()),
            timeout: Duration::from_secs(60),
            max_retries: 2,
            embedding_model: "text-embedding-3-small".into(),
            embedding_dimension: 1536,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout.is_zero() {
            return Err(ProviderError::InvalidRequest("timeout must be positive".into()));
        }
        if self.embedding_dimension == 0 {
            return Err(ProviderError::InvalidRequest(
                "embedding_dimension must be positive".into(),
            ));
        }
        Ok(())
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        if !(secs.is_finite() && secs >= 0.0) {
            return Err(serde::de::Error::custom("timeout must be a non-negative number of seconds"));
        }
        Ok(Duration::from_secs_f64(secs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_ignores_cosmetic_whitespace() {
        let a = ChatRequest::structured("enact", "thought", 0.7).var("line", "YOUTH:  Where   am I?\n");
        let b = ChatRequest::structured("enact", "thought", 0.7).var("line", "YOUTH: Where am I?");
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn fingerprint_separates_templates_and_variables() {
        let a = ChatRequest::structured("enact", "thought", 0.7).var("line", "x");
        let b = ChatRequest::structured("summary", "thought", 0.7).var("line", "x");
        let c = ChatRequest::structured("enact", "thought", 0.7).var("line", "y");
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn request_validation() {
        let mut req = ChatRequest::structured("enact", "thought", 0.7);
        assert!(req.validate().is_ok());
        req.schema_id = None;
        assert!(req.validate().is_err());
        let req = ChatRequest::structured("enact", "thought", 2.5);
        assert!(req.validate().is_err());
    }

    #[test]
    fn secrets_do_not_print() {
        let s = Secret("sk-very-secret".into());
        assert!(!format!("{s:?}").contains("sk-very"));
        let cfg = ProviderConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("REHEARSAL_API_KEY"));
    }
}
