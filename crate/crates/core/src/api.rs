//! Request and response bodies of the HTTP interface, shared by the
//! service and its clients.

use serde::{Deserialize, Serialize};

use crate::orchestrator::{Cursor, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadScreenplay {
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bios: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outline: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenplaySummary {
    pub id: String,
    pub title: String,
    pub scene_count: usize,
    pub line_count: usize,
    pub characters: Vec<String>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub screenplay_id: String,
    pub mode: Mode,
    #[serde(default)]
    pub activated: Vec<String>,
    /// Requested id; assigned by the service when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub screenplay_id: String,
    pub mode: Mode,
    pub activated: Vec<String>,
    pub cursor: Cursor,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkRequest {
    pub target_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}
