use std::path::Path;
use std::sync::Arc;

use rehearsal_core::provider::scripted::ScriptedProvider;
use rehearsal_core::provider::transcript::Transcript;
use rehearsal_service::ServiceConfig;

use crate::error::CliError;
use crate::flow::{self, Digests, RunInputs, RunRecord};
use crate::{connect, write};

/// Answer every request from the transcript and compare output digests
/// with the recorded ones.
pub async fn replay(path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let transcript = Transcript::from_jsonl(&text).map_err(|e| CliError::InvalidTranscript(e.to_string()))?;
    let record: RunRecord = serde_json::from_value(transcript.run.clone())
        .map_err(|e| CliError::InvalidTranscript(format!("header: {e}")))?;
    if record.command != "run" {
        return Err(CliError::InvalidTranscript(format!("cannot replay `{}`", record.command)));
    }
    let mut config = ServiceConfig {
        fixed_clock: record.fixed_clock.clone(),
        model_segmentation: record.model_segmentation,
        engine: record.engine.clone(),
        ..ServiceConfig::default()
    };
    config.provider.embedding_dimension = record.embedding_dimension;
    let provider = Arc::new(ScriptedProvider::from_transcript(&transcript));
    let conn = connect(None, None, config, Some(provider)).await?;
    let inputs = RunInputs {
        upload: record.screenplay.clone(),
        mode: record.mode,
        roles: record.roles.clone(),
        session_id: Some(record.session_id.clone()),
        marks: record.marks.clone(),
        mark_all: record.mark_all,
    };
    let outputs = match flow::drive(&conn.client, &inputs).await {
        Ok(o) => o,
        Err(CliError::Provider(m)) => return Err(CliError::Divergence(format!("request outside the recording: {m}"))),
        Err(e) => return Err(e),
    };
    if let Some(dir) = out {
        write(&dir.join("report.json"), &outputs.report)?;
        write(&dir.join("export.json"), &outputs.export)?;
        write(&dir.join("marks.json"), &outputs.marks)?;
    }
    let got = Digests::of(&outputs);
    let mut differing = Vec::new();
    for (name, want, have) in [
        ("export", &record.digests.export, &got.export),
        ("report", &record.digests.report, &got.report),
        ("marks", &record.digests.marks, &got.marks),
    ] {
        if want != have {
            differing.push(name);
        }
    }
    if differing.is_empty() {
        eprintln!("replay matches: {} exchange(s), session {}", transcript.entries.len(), outputs.session_id);
        Ok(())
    } else {
        Err(CliError::Divergence(format!("{} differ from the recording", differing.join(", "))))
    }
}
