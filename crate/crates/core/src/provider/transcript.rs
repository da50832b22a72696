//! Recorded provider traffic as sealed JSON lines.
//!
//! Layout: one `header` line carrying caller-defined run metadata, one
//! `entry` line per distinct request fingerprint (sorted by fingerprint),
//! and a final `seal` line holding the SHA-256 of every preceding byte.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("transcript line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("transcript is missing its {0} line")]
    Missing(&'static str),
    #[error("transcript seal mismatch: recorded {recorded}, computed {computed}")]
    SealMismatch { recorded: String, computed: String },
    #[error("unsupported transcript version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordedResponse {
    Completion(String),
    Embedding(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub fingerprint: String,
    /// Template id, or `embed` for embedding entries.
    pub template_id: String,
    pub request_digest: String,
    pub response: RecordedResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub run: Value,
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header { version: u32, run: Value },
    Entry(TranscriptEntry),
    Seal { sha256: String },
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
        entries.dedup_by(|a, b| a.fingerprint == b.fingerprint);

        let mut out = String::new();
        push_line(
            &mut out,
            &Line::Header {
                version: TRANSCRIPT_VERSION,
                run: self.run.clone(),
            },
        );
        for entry in entries {
            push_line(&mut out, &Line::Entry(entry));
        }
        let seal = hex::encode(Sha256::digest(out.as_bytes()));
        push_line(&mut out, &Line::Seal { sha256: seal });
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut run = None;
        let mut entries = Vec::new();
        let mut offset = 0usize;
        for (number, raw) in text.split_inclusive('\n').enumerate() {
            let line_no = number + 1;
            let trimmed = raw.trim_end_matches('\n');
            if trimmed.is_empty() {
                offset += raw.len();
                continue;
            }
            let parsed: Line = serde_json::from_str(trimmed).map_err(|e| TranscriptError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            match parsed {
                Line::Header { version, run: r } => {
                    if run.is_some() || line_no != 1 {
                        return Err(malformed(line_no, "header must be the first line"));
                    }
                    if version != TRANSCRIPT_VERSION {
                        return Err(TranscriptError::Version(version));
                    }
                    run = Some(r);
                }
                Line::Entry(entry) => {
                    if run.is_none() {
                        return Err(TranscriptError::Missing("header"));
                    }
                    entries.push(entry);
                }
                Line::Seal { sha256 } => {
                    let computed = hex::encode(Sha256::digest(&text.as_bytes()[..offset]));
                    if computed != sha256 {
                        return Err(TranscriptError::SealMismatch {
                            recorded: sha256,
                            computed,
                        });
                    }
                    if text[offset + raw.len()..].trim().len() > 0 {
                        return Err(malformed(line_no + 1, "content after seal"));
                    }
                    let run = run.ok_or(TranscriptError::Missing("header"))?;
                    return Ok(Transcript { run, entries });
                }
            }
            offset += raw.len();
        }
        Err(TranscriptError::Missing("seal"))
    }
}

fn push_line(out: &mut String, line: &Line) {
    out.push_str(&serde_json::to_string(line).expect("transcript line serializes"));
    out.push('\n');
}

fn malformed(line: usize, message: &str) -> TranscriptError {
    TranscriptError::Malformed {
        line,
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Transcript {
        Transcript {
            run: json!({"mode": "EvalPE"}),
            entries: vec![
                TranscriptEntry {
                    fingerprint: "bb".into(),
                    template_id: "enact".into(),
                    request_digest: "d1".into(),
                    response: RecordedResponse::Completion("{\"x\":1}".into()),
                },
                TranscriptEntry {
                    fingerprint: "aa".into(),
                    template_id: "embed".into(),
                    request_digest: "d2".into(),
                    response: RecordedResponse::Embedding(vec![0.6, 0.8]),
                },
            ],
        }
    }

    #[test]
    fn sealed_round_trip_sorts_entries() {
        let text = sample().to_jsonl();
        let back = Transcript::from_jsonl(&text).unwrap();
        assert_eq!(back.entries[0].fingerprint, "aa");
        assert_eq!(back.entries.len(), 2);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn every_single_byte_mutation_is_detected() {
        let text = sample().to_jsonl();
        let bytes = text.as_bytes();
        for i in 0..bytes.len() {
            let mut mutated = bytes.to_vec();
            mutated[i] = if mutated[i] == b'x' { b'y' } else { b'x' };
            let Ok(s) = String::from_utf8(mutated) else { continue };
            assert!(Transcript::from_jsonl(&s).is_err(), "mutation at byte {i} went unnoticed");
        }
    }

    #[test]
    fn missing_seal_is_rejected() {
        let text = sample().to_jsonl();
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(Transcript::from_jsonl(&cut), Err(TranscriptError::Missing("seal"))));
    }
}
