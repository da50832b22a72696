//! A directory of JSON documents, one file per document, written by
//! write-to-temp-then-rename so a reader only ever sees committed versions.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentKind {
    Screenplay,
    Session,
    Marks,
    Report,
    Transcript,
}

impl DocumentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DocumentKind::Screenplay => "screenplay",
            DocumentKind::Session => "session",
            DocumentKind::Marks => "marks",
            DocumentKind::Report => "report",
            DocumentKind::Transcript => "transcript",
        }
    }
}

impl fmt::Display for DocumentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDocument {
    pub kind: DocumentKind,
    pub id: String,
    pub version: u32,
    pub written_at: String,
    pub payload: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{kind} `{id}` not found")]
    NotFound { kind: DocumentKind, id: String },
    #[error("{kind} `{id}` is corrupt: {message}")]
    Corrupt {
        kind: DocumentKind,
        id: String,
        message: String,
    },
    #[error("invalid document id `{0}`")]
    InvalidId(String),
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where a write can be made to fail, for crash testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// The temp file is fully written but never renamed into place.
    BeforeRename,
}

#[derive(Debug)]
pub struct DocumentStore {
    root: PathBuf,
    fault: Fault,
    seq: AtomicU64,
}

fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 200
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

impl DocumentStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(DocumentStore {
            root,
            fault: Fault::None,
            seq: AtomicU64::new(0),
        })
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: DocumentKind, id: &str) -> PathBuf {
        self.root.join(kind.as_str()).join(format!("{id}.json"))
    }

    /// Atomically replace `path` with `bytes`.
    fn commit(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let dir = path.parent().expect("document paths have a parent");
        std::fs::create_dir_all(dir)?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("doc");
        let tmp = dir.join(format!(
            ".{name}.{}.{}.tmp",
            std::process::id(),
            self.seq.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        if self.fault == Fault::BeforeRename {
            return Err(StoreError::Io(std::io::Error::other("injected fault before rename")));
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn put(&self, kind: DocumentKind, id: &str, payload: Value) -> Result<StoredDocument, StoreError> {
        check_id(id)?;
        let doc = StoredDocument {
            kind,
            id: id.to_string(),
            version: DOCUMENT_VERSION,
            written_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            payload,
        };
        let bytes = serde_json::to_vec_pretty(&doc).expect("document serializes");
        self.commit(&self.path(kind, id), &bytes)?;
        Ok(doc)
    }

    pub fn put_as<T: Serialize>(&self, kind: DocumentKind, id: &str, value: &T) -> Result<StoredDocument, StoreError> {
        self.put(kind, id, serde_json::to_value(value).expect("value serializes"))
    }

    pub fn get(&self, kind: DocumentKind, id: &str) -> Result<StoredDocument, StoreError> {
        check_id(id)?;
        let path = self.path(kind, id);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound {
                    kind,
                    id: id.to_string(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let corrupt = |message: String| StoreError::Corrupt {
            kind,
            id: id.to_string(),
            message,
        };
        let doc: StoredDocument = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
        if doc.kind != kind || doc.id != id {
            return Err(corrupt(format!("file holds {} `{}`", doc.kind, doc.id)));
        }
        if doc.version > DOCUMENT_VERSION {
            return Err(corrupt(format!("unsupported version {}", doc.version)));
        }
        Ok(doc)
    }

    /// Read and validate the payload against `T`.
    pub fn get_as<T: DeserializeOwned>(&self, kind: DocumentKind, id: &str) -> Result<T, StoreError> {
        let doc = self.get(kind, id)?;
        serde_json::from_value(doc.payload).map_err(|e| StoreError::Corrupt {
            kind,
            id: id.to_string(),
            message: e.to_string(),
        })
    }

    pub fn exists(&self, kind: DocumentKind, id: &str) -> bool {
        check_id(id).is_ok() && self.path(kind, id).is_file()
    }

    /// Committed ids of one kind, sorted.
    pub fn list(&self, kind: DocumentKind) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join(kind.as_str());
        let mut ids = Vec::new();
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let name = entry?.file_name();
            let Some(name) = name.to_str() else { continue };
            if name.starts_with('.') {
                continue;
            }
            if let Some(id) = name.strip_suffix(".json") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Atomically write a plain-text artifact under `<root>/<area>/<id>/<name>`.
    pub fn put_artifact(&self, area: &str, id: &str, name: &str, text: &str) -> Result<PathBuf, StoreError> {
        check_id(area)?;
        check_id(id)?;
        check_id(name)?;
        let path = self.root.join(area).join(id).join(name);
        self.commit(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn artifact_path(&self, area: &str, id: &str, name: &str) -> PathBuf {
        self.root.join(area).join(id).join(name)
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn write_then_read_is_byte_equal() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        let payload = json!({"b": 1, "a": [0.1, 1e-300, "ünï"], "z": {"y": null}});
        store.put(DocumentKind::Report, "r1", payload.clone()).unwrap();
        let back = store.get(DocumentKind::Report, "r1").unwrap();
        assert_eq!(serde_json::to_vec(&back.payload).unwrap(), serde_json::to_vec(&payload).unwrap());
        assert_eq!(back.version, DOCUMENT_VERSION);
        assert!(back.written_at.ends_with('Z'));
    }

    #[test]
    fn unknown_and_invalid_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        assert!(matches!(store.get(DocumentKind::Session, "nope"), Err(StoreError::NotFound { .. })));
        assert!(matches!(store.get(DocumentKind::Session, "../etc"), Err(StoreError::InvalidId(_))));
        assert!(matches!(store.put(DocumentKind::Session, "a/b", json!(1)), Err(StoreError::InvalidId(_))));
    }

    #[test]
    fn crash_before_rename_keeps_prior_version() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        store.put(DocumentKind::Session, "s", json!({"v": 1})).unwrap();
        let faulty = DocumentStore::open(dir.path()).unwrap().with_fault(Fault::BeforeRename);
        assert!(faulty.put(DocumentKind::Session, "s", json!({"v": 2})).is_err());
        assert_eq!(store.get(DocumentKind::Session, "s").unwrap().payload, json!({"v": 1}));
        assert_eq!(store.list(DocumentKind::Session).unwrap(), vec!["s".to_string()]);
    }

    #[test]
    fn corrupt_and_mismatched_documents() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        std::fs::create_dir_all(dir.path().join("marks")).unwrap();
        std::fs::write(dir.path().join("marks/m.json"), b"{not json").unwrap();
        assert!(matches!(store.get(DocumentKind::Marks, "m"), Err(StoreError::Corrupt { .. })));
        store.put(DocumentKind::Report, "x", json!(1)).unwrap();
        std::fs::copy(dir.path().join("report/x.json"), dir.path().join("marks/x.json")).unwrap();
        assert!(matches!(store.get(DocumentKind::Marks, "x"), Err(StoreError::Corrupt { .. })));
        assert!(matches!(store.get_as::<Vec<String>>(DocumentKind::Report, "x"), Err(StoreError::Corrupt { .. })));
    }
}
