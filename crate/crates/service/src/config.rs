//! Service configuration: TOML file, then `REHEARSAL_*` environment
//! variables, then command-line flags, each overriding the one before.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rehearsal_core::provider::{CredentialRef, ProviderConfig};
use rehearsal_core::EngineConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for {name}: {message}")]
    Env { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Deterministic built-in rules; no model access.
    Heuristic,
    /// An OpenAI-compatible HTTP endpoint.
    Http,
    /// Replay of a recorded transcript.
    Transcript,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub store_root: PathBuf,
    pub provider_kind: ProviderKind,
    pub provider: ProviderConfig,
    /// Transcript to replay when `provider_kind = "transcript"`.
    pub transcript: Option<PathBuf>,
    /// Directory of prompt templates overriding the built-in ones.
    pub templates_dir: Option<PathBuf>,
    /// Ask the model to segment scenes before falling back to patterns.
    pub model_segmentation: bool,
    /// Pin mark timestamps, for reproducible runs.
    pub fixed_clock: Option<String>,
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8787".into(),
            store_root: PathBuf::from("rehearsal-store"),
            provider_kind: ProviderKind::Heuristic,
            provider: ProviderConfig {
                embedding_dimension: rehearsal_core::provider::heuristic::DEFAULT_DIMENSION,
                ..Default::default()
            },
            transcript: None,
            templates_dir: None,
            model_segmentation: true,
            fixed_clock: None,
            engine: EngineConfig::default(),
        }
    }
}

pub const ENV_PREFIX: &str = "REHEARSAL_";

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// File (or defaults), then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        let env: HashMap<String, String> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        config.apply_env(&env)?;
        Ok(config)
    }

    /// Apply `REHEARSAL_*` overrides from `env`.
    pub fn apply_env(&mut self, env: &HashMap<String, String>) -> Result<(), ConfigError> {
        let get = |name: &str| env.get(&format!("{ENV_PREFIX}{name}")).filter(|v| !v.is_empty());
        let bad = |name: &str, message: String| ConfigError::Env {
            name: format!("{ENV_PREFIX}{name}"),
            message,
        };
        if let Some(v) = get("BIND") {
            self.bind = v.clone();
        }
        if let Some(v) = get("STORE") {
            self.store_root = PathBuf::from(v);
        }
        if let Some(v) = get("PROVIDER") {
            self.provider_kind = serde_json::from_value(serde_json::Value::String(v.to_lowercase()))
                .map_err(|_| bad("PROVIDER", format!("`{v}` is not one of heuristic, http, transcript")))?;
        }
        if let Some(v) = get("TRANSCRIPT") {
            self.transcript = Some(PathBuf::from(v));
        }
        if let Some(v) = get("ENDPOINT") {
            self.provider.endpoint = v.clone();
        }
        if let Some(v) = get("MODEL") {
            self.provider.model = v.clone();
        }
        if let Some(v) = get("EMBEDDING_MODEL") {
            self.provider.embedding_model = v.clone();
        }
        if let Some(v) = get("CREDENTIAL_ENV") {
            self.provider.credential = CredentialRef(v.clone());
        }
        if let Some(v) = get("TIMEOUT_SECS") {
            let secs: f64 = v.parse().map_err(|_| bad("TIMEOUT_SECS", format!("`{v}` is not a number")))?;
            if !(secs.is_finite() && secs > 0.0) {
                return Err(bad("TIMEOUT_SECS", "must be positive".into()));
            }
            self.provider.timeout = Duration::from_secs_f64(secs);
        }
        if let Some(v) = get("MAX_RETRIES") {
            let n: u32 = v.parse().map_err(|_| bad("MAX_RETRIES", format!("`{v}` is not a count")))?;
            self.provider.max_retries = n;
            self.engine.max_retries = n;
        }
        if let Some(v) = get("EMBEDDING_DIMENSION") {
            self.provider.embedding_dimension =
                v.parse().map_err(|_| bad("EMBEDDING_DIMENSION", format!("`{v}` is not a count")))?;
        }
        if let Some(v) = get("TEMPLATES") {
            self.templates_dir = Some(PathBuf::from(v));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(
            &path,
            r#"
bind = "0.0.0.0:9000"
provider_kind = "http"

[provider]
endpoint = "http://file/v1"
model = "m-file"
credential = "FILE_KEY"
timeout = 12.5
max_retries = 1
embedding_model = "e"
embedding_dimension = 8

[engine]
recall_k = 3
"#,
        )
        .unwrap();
        let mut c = ServiceConfig::from_file(&path).unwrap();
        assert_eq!(c.bind, "0.0.0.0:9000");
        assert_eq!(c.provider.timeout, Duration::from_secs_f64(12.5));
        assert_eq!(c.engine.recall_k, 3);
        assert_eq!(c.engine.context_budget, 8000);

        let env: HashMap<String, String> = [
            ("REHEARSAL_MODEL", "m-env"),
            ("REHEARSAL_CREDENTIAL_ENV", "ENV_KEY"),
            ("REHEARSAL_PROVIDER", "Heuristic"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        c.apply_env(&env).unwrap();
        assert_eq!(c.provider.model, "m-env");
        assert_eq!(c.provider.endpoint, "http://file/v1");
        assert_eq!(c.provider.credential, CredentialRef("ENV_KEY".into()));
        assert_eq!(c.provider_kind, ProviderKind::Heuristic);
    }

    #[test]
    fn bad_env_values_are_reported() {
        let mut c = ServiceConfig::default();
        let env: HashMap<String, String> = [("REHEARSAL_TIMEOUT_SECS".to_string(), "soon".to_string())].into();
        assert!(matches!(c.apply_env(&env), Err(ConfigError::Env { .. })));
    }

    #[test]
    fn serialized_config_holds_no_secret() {
        std::env::set_var("REHEARSAL_CONFIG_TEST_SECRET", "sk-live-very-secret");
        let mut c = ServiceConfig::default();
        c.provider.credential = CredentialRef("REHEARSAL_CONFIG_TEST_SECRET".into());
        let text = toml::to_string(&c).unwrap();
        assert!(text.contains("REHEARSAL_CONFIG_TEST_SECRET"));
        assert!(!text.contains("sk-live-very-secret"));
        assert!(!format!("{c:?}").contains("sk-live-very-secret"));
    }
}
