//! The command sequence behind `run`, `compare` and `replay`.

use rehearsal_client::{Client, ClientError};
use rehearsal_core::api::{CreateSession, UploadScreenplay};
use rehearsal_core::{EngineConfig, Mode, SessionReport};
use rehearsal_service::ServiceConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::info;

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct RunInputs {
    pub upload: UploadScreenplay,
    pub mode: Mode,
    pub roles: Vec<String>,
    pub session_id: Option<String>,
    pub marks: Vec<String>,
    pub mark_all: bool,
}

pub struct RunOutputs {
    pub session_id: String,
    pub export: String,
    pub report: String,
    pub marks: String,
    pub parsed_report: SessionReport,
}

pub fn sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digests {
    pub export: String,
    pub report: String,
    pub marks: String,
}

impl Digests {
    pub fn of(outputs: &RunOutputs) -> Self {
        Digests {
            export: sha256(&outputs.export),
            report: sha256(&outputs.report),
            marks: sha256(&outputs.marks),
        }
    }
}

/// Transcript header: everything needed to repeat a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub command: String,
    pub screenplay: UploadScreenplay,
    pub mode: Mode,
    pub roles: Vec<String>,
    pub session_id: String,
    pub marks: Vec<String>,
    pub mark_all: bool,
    pub fixed_clock: Option<String>,
    pub model_segmentation: bool,
    pub embedding_dimension: usize,
    pub engine: EngineConfig,
    pub digests: Digests,
}

impl RunRecord {
    pub fn new(inputs: &RunInputs, outputs: &RunOutputs, config: &ServiceConfig) -> Self {
        RunRecord {
            command: "run".into(),
            screenplay: inputs.upload.clone(),
            mode: inputs.mode,
            roles: inputs.roles.clone(),
            session_id: outputs.session_id.clone(),
            marks: inputs.marks.clone(),
            mark_all: inputs.mark_all,
            fixed_clock: config.fixed_clock.clone(),
            model_segmentation: config.model_segmentation,
            embedding_dimension: config.provider.embedding_dimension,
            engine: config.engine.clone(),
            digests: Digests::of(outputs),
        }
    }
}

/// Upload, create, step through every line closing each scene as it
/// completes, mark, then collect the stored artifacts.
pub async fn drive(client: &Client, inputs: &RunInputs) -> Result<RunOutputs, CliError> {
    let screenplay = client.upload_screenplay(&inputs.upload).await?;
    info!(id = %screenplay.id, scenes = screenplay.scene_count, "screenplay ready");
    let session = client
        .create_session(&CreateSession {
            screenplay_id: screenplay.id.clone(),
            mode: inputs.mode,
            activated: inputs.roles.clone(),
            id: inputs.session_id.clone(),
        })
        .await?;
    let id = session.id;
    loop {
        match client.step(&id).await {
            Ok(_) => {}
            Err(ClientError::Api { status: 409, code, .. }) if code == "scene_finish_required" => {
                let posthoc = client.finish_scene(&id).await?;
                info!(scene = posthoc.scene_index, items = posthoc.items.len(), "scene finished");
            }
            Err(ClientError::Api { status: 410, .. }) => break,
            Err(e) => return Err(e.into()),
        }
    }
    let mut targets = inputs.marks.clone();
    if inputs.mark_all {
        let session = client.export(&id).await?;
        targets.extend(session.thoughts.iter().map(|t| t.id.clone()));
        targets.extend(session.feedback_log.iter().map(|i| i.id.clone()));
    }
    for target in &targets {
        client.mark(&id, target).await?;
    }
    let report = client.report_text(&id).await?;
    let parsed_report: SessionReport =
        serde_json::from_str(&report).map_err(|e| CliError::Service(format!("undecodable report: {e}")))?;
    Ok(RunOutputs {
        export: client.export_text(&id).await?,
        marks: client.marks_text(&id).await?,
        report,
        parsed_report,
        session_id: id,
    })
}
