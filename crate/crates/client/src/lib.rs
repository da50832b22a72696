//! Typed client for the rehearsal service.

use rehearsal_core::api::{CreateSession, ErrorBody, MarkRequest, ScreenplaySummary, SessionSummary, UploadScreenplay};
use rehearsal_core::orchestrator::{PosthocResult, SessionEvent, StepResult, ValueMark};
use rehearsal_core::{ParsedScreenplay, Session, SessionReport};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{status} {code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl ClientError {
    /// The service's error code, if the request reached it.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// One server-sent event as framed on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SseMessage {
    pub id: Option<String>,
    pub event: String,
    pub data: String,
}

impl SseMessage {
    pub fn decode(&self) -> Result<SessionEvent> {
        let data: serde_json::Value = serde_json::from_str(&self.data).map_err(|e| ClientError::Decode(e.to_string()))?;
        serde_json::from_value(serde_json::json!({ "event": self.event, "data": data }))
            .map_err(|e| ClientError::Decode(format!("{} event: {e}", self.event)))
    }
}

/// Split an event-stream body into messages. Comments and keep-alives are
/// dropped; multi-line data is joined with newlines.
pub fn parse_sse(text: &str) -> Vec<SseMessage> {
    let mut out = Vec::new();
    let mut current = SseMessage::default();
    let mut data: Vec<&str> = Vec::new();
    let mut dirty = false;
    for line in text.lines() {
        if line.is_empty() {
            if dirty && !data.is_empty() {
                current.data = data.join("\n");
                if current.event.is_empty() {
                    current.event = "message".into();
                }
                out.push(std::mem::take(&mut current));
            }
            current = SseMessage::default();
            data.clear();
            dirty = false;
            continue;
        }
        if line.starts_with(':') {
            continue;
        }
        let (field, value) = match line.split_once(':') {
            Some((f, v)) => (f, v.strip_prefix(' ').unwrap_or(v)),
            None => (line, ""),
        };
        dirty = true;
        match field {
            "event" => current.event = value.to_string(),
            "data" => data.push(value),
            "id" => current.id = Some(value.to_string()),
            _ => {}
        }
    }
    if dirty && !data.is_empty() {
        current.data = data.join("\n");
        if current.event.is_empty() {
            current.event = "message".into();
        }
        out.push(current);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8787`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn send(&self, request: reqwest::RequestBuilder) -> Result<String> {
        let response = request.send().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        if status.is_success() {
            return Ok(text);
        }
        let (code, message) = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => (body.code, body.message),
            Err(_) => ("unknown".to_string(), text),
        };
        Err(ClientError::Api {
            status: status.as_u16(),
            code,
            message,
        })
    }

    async fn get_text(&self, path: &str) -> Result<String> {
        self.send(self.http.get(self.url(path))).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        decode(&self.get_text(path).await?)
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<T> {
        let mut request = self.http.post(self.url(path));
        if let Some(body) = body {
            request = request.json(body);
        }
        decode(&self.send(request).await?)
    }

    pub async fn health(&self) -> Result<()> {
        self.get_text("/health").await.map(|_| ())
    }

    pub async fn upload_screenplay(&self, upload: &UploadScreenplay) -> Result<ScreenplaySummary> {
        self.post("/screenplays", Some(upload)).await
    }

    pub async fn screenplay(&self, id: &str) -> Result<ParsedScreenplay> {
        self.get(&format!("/screenplays/{id}")).await
    }

    pub async fn create_session(&self, request: &CreateSession) -> Result<SessionSummary> {
        self.post("/sessions", Some(request)).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionSummary> {
        self.get(&format!("/sessions/{id}")).await
    }

    pub async fn step(&self, id: &str) -> Result<StepResult> {
        self.post::<(), _>(&format!("/sessions/{id}/step"), None).await
    }

    pub async fn finish_scene(&self, id: &str) -> Result<PosthocResult> {
        self.post::<(), _>(&format!("/sessions/{id}/finish-scene"), None).await
    }

    /// Step and finish scenes until the screenplay is exhausted.
    pub async fn run(&self, id: &str) -> Result<SessionReport> {
        self.post::<(), _>(&format!("/sessions/{id}/run"), None).await
    }

    pub async fn report(&self, id: &str) -> Result<SessionReport> {
        decode(&self.report_text(id).await?)
    }

    pub async fn report_text(&self, id: &str) -> Result<String> {
        self.get_text(&format!("/sessions/{id}/report")).await
    }

    pub async fn mark(&self, id: &str, target_id: &str) -> Result<ValueMark> {
        let body = MarkRequest {
            target_id: target_id.to_string(),
        };
        self.post(&format!("/sessions/{id}/marks"), Some(&body)).await
    }

    pub async fn marks(&self, id: &str) -> Result<Vec<ValueMark>> {
        decode(&self.marks_text(id).await?)
    }

    pub async fn marks_text(&self, id: &str) -> Result<String> {
        self.get_text(&format!("/sessions/{id}/marks")).await
    }

    /// The stored session document, verbatim.
    pub async fn export_text(&self, id: &str) -> Result<String> {
        self.get_text(&format!("/sessions/{id}/export")).await
    }

    pub async fn export(&self, id: &str) -> Result<Session> {
        decode(&self.export_text(id).await?)
    }

    /// Events committed so far, without waiting for new ones.
    pub async fn events(&self, id: &str) -> Result<Vec<SseMessage>> {
        Ok(parse_sse(&self.get_text(&format!("/sessions/{id}/events?follow=false")).await?))
    }
}

fn decode<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| ClientError::Decode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sse_framing() {
        let text = ": keep-alive\n\nid: 0\nevent: step\ndata: {\"a\":1}\n\nid: 1\nevent: mark\ndata: x\ndata: y\n\ndata: tail";
        let messages = parse_sse(text);
        assert_eq!(messages.len(), 3);
        assert_eq!(messages[0].id.as_deref(), Some("0"));
        assert_eq!(messages[0].event, "step");
        assert_eq!(messages[0].data, "{\"a\":1}");
        assert_eq!(messages[1].data, "x\ny");
        assert_eq!(messages[2].event, "message");
        assert_eq!(messages[2].data, "tail");
    }

    #[test]
    fn unknown_event_does_not_decode() {
        let m = SseMessage {
            id: None,
            event: "nonsense".into(),
            data: "{}".into(),
        };
        assert!(matches!(m.decode(), Err(ClientError::Decode(_))));
    }
}
