//! Client for chat-completion and embedding endpoints of the commonly
//! deployed `/v1` shape.

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;
use tracing::{debug, warn};

use super::templates::TemplateSet;
use super::{ChatRequest, EmbedRequest, LlmProvider, ProviderConfig, ProviderError};

pub struct OpenAiCompatProvider {
    client: reqwest::Client,
    config: ProviderConfig,
    templates: TemplateSet,
}

impl std::fmt::Debug for OpenAiCompatProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiCompatProvider")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("credential", &self.config.credential)
            .finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl OpenAiCompatProvider {
    pub fn new(config: ProviderConfig, templates: TemplateSet) -> Result<Self, ProviderError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(OpenAiCompatProvider {
            client,
            config,
            templates,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.endpoint.trim_end_matches('/'))
    }

    async fn post(&self, path: &str, body: &serde_json::Value) -> Result<String, ProviderError> {
        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            let mut req = self.client.post(self.url(path)).json(body);
            if let Some(secret) = self.config.credential.resolve() {
                req = req.bearer_auth(secret.expose());
            }
            let response = match req.send().await {
                Ok(r) => r,
                Err(e) => {
                    let message = e.without_url().to_string();
                    warn!(attempt, path, "request failed: {message}");
                    last = Some(ProviderError::Transport(message));
                    continue;
                }
            };
            let status = response.status();
            let text = response.text().await.map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
            if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
                return Err(ProviderError::Auth(format!("HTTP {}", status.as_u16())));
            }
            if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
                warn!(attempt, path, status = status.as_u16(), "retryable response");
                last = Some(ProviderError::Transport(format!("HTTP {}", status.as_u16())));
                continue;
            }
            if !status.is_success() {
                let excerpt: String = text.chars().take(200).collect();
                return Err(ProviderError::Transport(format!("HTTP {}: {excerpt}", status.as_u16())));
            }
            debug!(path, bytes = text.len(), "response received");
            return Ok(text);
        }
        Err(last.unwrap_or_else(|| ProviderError::Transport("no attempt made".into())))
    }
}

#[async_trait]
impl LlmProvider for OpenAiCompatProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let messages = self.templates.get(&request.template_id)?.render(&request.variables)?;
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
        });
        if request.expects_structure {
            body["response_format"] = json!({"type": "json_object"});
        }
        let text = self.post("chat/completions", &body).await?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::Transport(format!("unreadable completion: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Transport("completion has no content".into()))
    }

    async fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
        if request.texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({
            "model": self.config.embedding_model,
            "input": request.texts,
        });
        let text = self.post("embeddings", &body).await?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::Transport(format!("unreadable embeddings: {e}")))?;
        if parsed.data.len() != request.texts.len() {
            return Err(ProviderError::ArityMismatch {
                expected: request.texts.len(),
                actual: parsed.data.len(),
            });
        }
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        let expected = self.config.embedding_dimension;
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != expected {
                    Err(ProviderError::DimensionMismatch {
                        expected,
                        actual: d.embedding.len(),
                    })
                } else {
                    Ok(d.embedding)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::{Arc, Mutex};
    use std::time::Duration;

    use axum::extract::State;
    use axum::http::{HeaderMap, StatusCode};
    use axum::routing::post;
    use axum::{Json, Router};
    use serde_json::Value;

    use super::*;
    use crate::provider::templates::ENACT;
    use crate::provider::{CredentialRef, GENERATION_TEMPERATURE};

    #[derive(Clone, Default)]
    struct Seen {
        auth: Arc<Mutex<Vec<Option<String>>>>,
        bodies: Arc<Mutex<Vec<Value>>>,
    }

    async fn chat(State(seen): State<Seen>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
        let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_string());
        seen.auth.lock().unwrap().push(auth.clone());
        seen.bodies.lock().unwrap().push(body);
        if auth.as_deref() == Some("Bearer wrong") {
            return (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad key"})));
        }
        (StatusCode::OK, Json(json!({"choices": [{"message": {"role": "assistant", "content": "{\"ok\":true}"}}]})))
    }

    async fn embeddings(Json(body): Json<Value>) -> Json<Value> {
        let n = body["input"].as_array().unwrap().len();
        let data: Vec<Value> = (0..n).rev().map(|i| json!({"index": i, "embedding": [i as f64, 1.0, 0.0]})).collect();
        Json(json!({ "data": data }))
    }

    async fn serve() -> (String, Seen) {
        let seen = Seen::default();
        let app = Router::new()
            .route("/v1/chat/completions", post(chat))
            .route("/v1/embeddings", post(embeddings))
            .with_state(seen.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        (format!("http://{addr}/v1"), seen)
    }

    fn config(endpoint: String, env: &str, dim: usize) -> ProviderConfig {
        ProviderConfig {
            endpoint,
            credential: CredentialRef(env.into()),
            timeout: Duration::from_secs(5),
            max_retries: 0,
            embedding_dimension: dim,
            ..Default::default()
        }
    }

    fn enact_request() -> ChatRequest {
        ChatRequest::structured(ENACT, "inner_thought", GENERATION_TEMPERATURE)
            .var("character", "Youth")
            .var("scene_heading", "INT. STATION")
            .var("context", "## Character\nYouth")
            .var("line", "YOUTH: Where are we?")
    }

    #[tokio::test]
    async fn completion_renders_template_and_sends_key() {
        let (endpoint, seen) = serve().await;
        std::env::set_var("REHEARSAL_TEST_KEY_OK", "sk-test-123");
        let p = OpenAiCompatProvider::new(config(endpoint, "REHEARSAL_TEST_KEY_OK", 3), TemplateSet::builtin()).unwrap();
        let out = p.complete(&enact_request()).await.unwrap();
        assert_eq!(out, "{\"ok\":true}");
        assert_eq!(seen.auth.lock().unwrap()[0].as_deref(), Some("Bearer sk-test-123"));
        let body = seen.bodies.lock().unwrap()[0].clone();
        assert_eq!(body["messages"][0]["role"], "system");
        assert!(body["messages"][1]["content"].as_str().unwrap().contains("YOUTH: Where are we?"));
        assert_eq!(body["response_format"]["type"], "json_object");
        assert!(!format!("{p:?}").contains("sk-test-123"));
    }

    #[tokio::test]
    async fn rejected_key_is_an_auth_error() {
        let (endpoint, _) = serve().await;
        std::env::set_var("REHEARSAL_TEST_KEY_BAD", "wrong");
        let p = OpenAiCompatProvider::new(config(endpoint, "REHEARSAL_TEST_KEY_BAD", 3), TemplateSet::builtin()).unwrap();
        let err = p.complete(&enact_request()).await.unwrap_err();
        assert!(matches!(err, ProviderError::Auth(_)));
        assert!(!err.to_string().contains("wrong"));
    }

    #[tokio::test]
    async fn embeddings_are_reordered_and_checked() {
        let (endpoint, _) = serve().await;
        let p = OpenAiCompatProvider::new(config(endpoint.clone(), "REHEARSAL_TEST_UNSET", 3), TemplateSet::builtin()).unwrap();
        let out = p.embed(&EmbedRequest::new(vec!["a".into(), "b".into()])).await.unwrap();
        assert_eq!(out, vec![vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]]);

        let p = OpenAiCompatProvider::new(config(endpoint, "REHEARSAL_TEST_UNSET", 4), TemplateSet::builtin()).unwrap();
        let err = p.embed(&EmbedRequest::new(vec!["a".into()])).await.unwrap_err();
        assert!(matches!(err, ProviderError::DimensionMismatch { expected: 4, actual: 3 }));
    }

    #[tokio::test]
    async fn unreachable_endpoint_is_a_transport_error() {
        let p = OpenAiCompatProvider::new(config("http://127.0.0.1:9/v1".into(), "REHEARSAL_TEST_UNSET", 3), TemplateSet::builtin()).unwrap();
        assert!(matches!(p.complete(&enact_request()).await, Err(ProviderError::Transport(_))));
    }
}
