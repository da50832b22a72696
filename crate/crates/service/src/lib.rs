//! HTTP/JSON service over the rehearsal engine.
//!
//! Sessions are driven through plain requests and observed through a
//! server-sent event stream; every committed state is kept in a directory
//! of JSON documents.

pub mod app;
pub mod config;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rehearsal_core::orchestrator::{Clock, FixedClock, SystemClock};
use rehearsal_core::provider::heuristic::HeuristicProvider;
use rehearsal_core::provider::http::OpenAiCompatProvider;
use rehearsal_core::provider::scripted::ScriptedProvider;
use rehearsal_core::provider::templates::TemplateSet;
use rehearsal_core::provider::transcript::Transcript;
use rehearsal_core::{LlmProvider, ParserConfig};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub use app::{router, ApiError, AppState};
pub use config::{ConfigError, ProviderKind, ServiceConfig};
pub use store::{DocumentKind, DocumentStore, StoreError, StoredDocument};

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("provider setup failed: {0}")]
    Provider(String),
    #[error("invalid fixed_clock `{0}`: expected an RFC 3339 timestamp")]
    Clock(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

/// The provider selected by `config`.
pub fn build_provider(config: &ServiceConfig) -> Result<Arc<dyn LlmProvider>, StartError> {
    match config.provider_kind {
        ProviderKind::Heuristic => Ok(Arc::new(HeuristicProvider::new(config.provider.embedding_dimension))),
        ProviderKind::Http => {
            let templates = match &config.templates_dir {
                Some(dir) => TemplateSet::with_overrides(dir).map_err(|e| StartError::Provider(e.to_string()))?,
                None => TemplateSet::builtin(),
            };
            let provider = OpenAiCompatProvider::new(config.provider.clone(), templates)
                .map_err(|e| StartError::Provider(e.to_string()))?;
            Ok(Arc::new(provider))
        }
        ProviderKind::Transcript => {
            let path = config
                .transcript
                .as_ref()
                .ok_or_else(|| StartError::Provider("provider_kind = \"transcript\" needs `transcript`".into()))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| StartError::Provider(format!("cannot read {}: {e}", path.display())))?;
            let transcript = Transcript::from_jsonl(&text).map_err(|e| StartError::Provider(e.to_string()))?;
            Ok(Arc::new(ScriptedProvider::from_transcript(&transcript)))
        }
    }
}

pub fn build_clock(config: &ServiceConfig) -> Result<Arc<dyn Clock>, StartError> {
    match &config.fixed_clock {
        Some(text) => {
            let at = DateTime::parse_from_rfc3339(text).map_err(|_| StartError::Clock(text.clone()))?;
            Ok(Arc::new(FixedClock(at.with_timezone(&Utc))))
        }
        None => Ok(Arc::new(SystemClock)),
    }
}

/// State for `config`, with `provider` in place of the configured one.
pub fn state_with_provider(config: &ServiceConfig, provider: Arc<dyn LlmProvider>) -> Result<AppState, StartError> {
    let store = DocumentStore::open(&config.store_root)?;
    let parser = ParserConfig {
        model_segmentation: config.model_segmentation,
        max_retries: config.engine.max_retries,
        ..ParserConfig::default()
    };
    Ok(AppState::new(
        store,
        provider,
        config.engine.clone(),
        parser,
        config.provider.embedding_dimension,
        build_clock(config)?,
    ))
}

pub fn build_state(config: &ServiceConfig) -> Result<AppState, StartError> {
    state_with_provider(config, build_provider(config)?)
}

/// Bind `addr` and serve in the background. Returns the bound address.
pub async fn spawn(state: AppState, addr: &str) -> Result<(SocketAddr, JoinHandle<()>), StartError> {
    let listener = TcpListener::bind(addr).await.map_err(|source| StartError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let local = listener.local_addr().map_err(|source| StartError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let app = router(Arc::new(state));
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

/// Serve until interrupted.
pub async fn serve(config: &ServiceConfig) -> Result<(), StartError> {
    let state = build_state(config)?;
    let listener = TcpListener::bind(&config.bind).await.map_err(|source| StartError::Bind {
        addr: config.bind.clone(),
        source,
    })?;
    tracing::info!(addr = %config.bind, provider = ?config.provider_kind, "listening");
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| StartError::Bind {
            addr: config.bind.clone(),
            source,
        })
}
