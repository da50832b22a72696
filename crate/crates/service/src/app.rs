//! Routes, shared state and the persistence step that follows every
//! session mutation.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use rehearsal_core::api::{CreateSession, ErrorBody, MarkRequest, ScreenplaySummary, SessionSummary, UploadScreenplay};
use rehearsal_core::orchestrator::{Clock, PosthocResult, SessionEvent, StepResult, ValueMark};
use rehearsal_core::parser::ParseError;
use rehearsal_core::{
    parse_screenplay, EngineConfig, LlmProvider, ParsedScreenplay, ParserConfig, RawScreenplay, Session, SessionError,
    SessionReport,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::sync::broadcast;
use tracing::{info, warn};

use crate::store::{DocumentKind, DocumentStore, StoreError};

const CHANNEL_CAPACITY: usize = 256;

pub struct AppState {
    pub store: DocumentStore,
    pub provider: Arc<dyn LlmProvider>,
    pub engine: EngineConfig,
    pub parser: ParserConfig,
    pub embedding_dimension: usize,
    pub clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    channels: Mutex<HashMap<String, broadcast::Sender<(usize, SessionEvent)>>>,
    create_lock: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(
        store: DocumentStore,
        provider: Arc<dyn LlmProvider>,
        engine: EngineConfig,
        parser: ParserConfig,
        embedding_dimension: usize,
        clock: Arc<dyn Clock>,
    ) -> Self {
        AppState {
            store,
            provider,
            engine,
            parser,
            embedding_dimension,
            clock,
            sessions: Mutex::new(HashMap::new()),
            channels: Mutex::new(HashMap::new()),
            create_lock: tokio::sync::Mutex::new(()),
        }
    }

    fn channel(&self, id: &str) -> broadcast::Sender<(usize, SessionEvent)> {
        self.channels
            .lock()
            .expect("channel map")
            .entry(id.to_string())
            .or_insert_with(|| broadcast::channel(CHANNEL_CAPACITY).0)
            .clone()
    }

    /// The live handle for a session, loading it from the store on first use.
    fn handle(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        if let Some(h) = self.sessions.lock().expect("session map").get(id) {
            return Ok(h.clone());
        }
        let session: Session = self.store.get_as(DocumentKind::Session, id)?;
        let mut map = self.sessions.lock().expect("session map");
        Ok(map
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(session)))
            .clone())
    }

    /// Write every document derived from `session`, then announce events
    /// from index `from` on.
    fn commit(&self, session: &Session, from: usize) -> Result<(), ApiError> {
        self.store.put_as(DocumentKind::Session, &session.id, session)?;
        self.store.put_as(DocumentKind::Marks, &session.id, &session.marks)?;
        for agent in session.agents.values() {
            let name = format!("{}.jsonl", artifact_slug(&agent.id));
            self.store.put_artifact("traces", &session.id, &name, &agent.long_term.to_jsonl())?;
        }
        let verdicts: String = session
            .assessments
            .iter()
            .map(|a| serde_json::to_string(a).expect("assessment serializes") + "\n")
            .collect();
        self.store.put_artifact("verdicts", &session.id, "verdicts.jsonl", &verdicts)?;
        if session.is_finished() {
            self.store.put_as(DocumentKind::Report, &session.id, &SessionReport::from_session(session))?;
        }
        let tx = self.channel(&session.id);
        for (i, event) in session.events.iter().enumerate().skip(from) {
            let _ = tx.send((i, event.clone()));
        }
        Ok(())
    }
}

fn artifact_slug(name: &str) -> String {
    let slug: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    let slug = slug.trim_matches('-').to_string();
    if slug.is_empty() {
        "agent".into()
    } else {
        slug
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            warn!(code = %self.code, "{}", self.message);
        }
        let body = ErrorBody {
            code: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::NotFound { kind, .. } => ApiError::new(StatusCode::NOT_FOUND, &format!("{kind}_not_found"), e.to_string()),
            StoreError::InvalidId(_) => ApiError::new(StatusCode::NOT_FOUND, "invalid_id", e.to_string()),
            StoreError::Corrupt { .. } => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt_document", e.to_string()),
            StoreError::Io(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", e.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownCharacter(_)
            | SessionError::InvalidModeConfig(_)
            | SessionError::SceneFinishRequired { .. }
            | SessionError::SceneIncomplete { .. } => StatusCode::CONFLICT,
            SessionError::EndOfScreenplay => StatusCode::GONE,
            SessionError::UnknownTarget(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_GATEWAY,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<ParseError> for ApiError {
    fn from(e: ParseError) -> Self {
        match &e {
            ParseError::EmptyBody => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_screenplay", e.to_string()),
            ParseError::Invalid(_) | ParseError::UnknownCharacter(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "parse_error", e.to_string())
            }
            _ => ApiError::new(StatusCode::BAD_GATEWAY, "provider_error", e.to_string()),
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.to_string()))
}

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/screenplays", post(upload_screenplay).get(list_screenplays))
        .route("/screenplays/{id}", get(get_screenplay))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/finish-scene", post(finish_scene))
        .route("/sessions/{id}/run", post(run))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/marks", post(mark).get(marks))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/events", get(events))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no_route", "no such route") })
        .with_state(state)
}

fn summarize(id: &str, parsed: &ParsedScreenplay) -> ScreenplaySummary {
    ScreenplaySummary {
        id: id.to_string(),
        title: parsed.title.clone(),
        scene_count: parsed.scenes.len(),
        line_count: parsed.lines.len(),
        characters: parsed.characters.clone(),
        diagnostics: parsed.diagnostics.clone(),
    }
}

async fn upload_screenplay(State(state): Shared, body: Bytes) -> ApiResult<(StatusCode, Json<ScreenplaySummary>)> {
    let upload: UploadScreenplay = parse_body(&body)?;
    let raw = RawScreenplay {
        title: upload.title,
        body: upload.body,
        bios: upload.bios,
        outline: upload.outline,
    };
    if raw.is_blank() {
        return Err(ParseError::EmptyBody.into());
    }
    let id = raw.content_id();
    if let Ok(parsed) = state.store.get_as::<ParsedScreenplay>(DocumentKind::Screenplay, &id) {
        return Ok((StatusCode::OK, Json(summarize(&id, &parsed))));
    }
    let parsed = parse_screenplay(&raw, &*state.provider, &state.parser).await?;
    state.store.put_as(DocumentKind::Screenplay, &id, &parsed)?;
    info!(%id, scenes = parsed.scenes.len(), "screenplay stored");
    Ok((StatusCode::CREATED, Json(summarize(&id, &parsed))))
}

async fn list_screenplays(State(state): Shared) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(state.store.list(DocumentKind::Screenplay)?))
}

async fn get_screenplay(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<ParsedScreenplay>> {
    Ok(Json(state.store.get_as(DocumentKind::Screenplay, &id)?))
}

fn session_summary(s: &Session) -> SessionSummary {
    SessionSummary {
        id: s.id.clone(),
        screenplay_id: s.screenplay_id.clone(),
        mode: s.mode,
        activated: s.activated.clone(),
        cursor: s.cursor,
        finished: s.is_finished(),
    }
}

async fn create_session(State(state): Shared, body: Bytes) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let request: CreateSession = parse_body(&body)?;
    let parsed: ParsedScreenplay = state.store.get_as(DocumentKind::Screenplay, &request.screenplay_id)?;
    let _guard = state.create_lock.lock().await;
    let id = match request.id {
        Some(id) => {
            if state.store.exists(DocumentKind::Session, &id) {
                return Err(ApiError::new(StatusCode::CONFLICT, "session_exists", format!("session `{id}` already exists")));
            }
            id
        }
        None => {
            let stem = format!("{}-{}", request.screenplay_id, request.mode.as_str().to_lowercase());
            (1..)
                .map(|n| format!("{stem}-{n}"))
                .find(|id| !state.store.exists(DocumentKind::Session, id))
                .expect("unbounded range")
        }
    };
    let mut session = Session::create(
        id.clone(),
        parsed,
        request.mode,
        &request.activated,
        state.engine.clone(),
        state.embedding_dimension,
    )?;
    session.screenplay_id = request.screenplay_id;
    state.commit(&session, 0)?;
    info!(%id, mode = %session.mode, "session created");
    let summary = session_summary(&session);
    state.sessions.lock().expect("session map").insert(id, Arc::new(tokio::sync::Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_sessions(State(state): Shared) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(state.store.list(DocumentKind::Session)?))
}

async fn get_session(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<SessionSummary>> {
    let session: Session = state.store.get_as(DocumentKind::Session, &id)?;
    Ok(Json(session_summary(&session)))
}

enum Command {
    Step,
    FinishScene,
}

enum Outcome {
    Step(StepResult),
    Posthoc(PosthocResult),
}

/// Apply one command to a copy of the session, commit the copy, and only
/// then make it the live state.
async fn apply(state: &AppState, session: &mut Session, command: Command) -> ApiResult<Outcome> {
    let mut next = session.clone();
    let from = next.events.len();
    let outcome = match command {
        Command::Step => Outcome::Step(next.step(&*state.provider).await?),
        Command::FinishScene => Outcome::Posthoc(next.finish_scene(&*state.provider).await?),
    };
    state.commit(&next, from)?;
    *session = next;
    Ok(outcome)
}

async fn step(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<StepResult>> {
    let handle = state.handle(&id)?;
    let mut session = handle.lock().await;
    match apply(&state, &mut session, Command::Step).await? {
        Outcome::Step(r) => Ok(Json(r)),
        Outcome::Posthoc(_) => unreachable!("step yields a step result"),
    }
}

async fn finish_scene(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<PosthocResult>> {
    let handle = state.handle(&id)?;
    let mut session = handle.lock().await;
    match apply(&state, &mut session, Command::FinishScene).await? {
        Outcome::Posthoc(r) => Ok(Json(r)),
        Outcome::Step(_) => unreachable!("finish yields a posthoc result"),
    }
}

async fn run(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<SessionReport>> {
    let handle = state.handle(&id)?;
    let mut session = handle.lock().await;
    while !session.is_finished() {
        let command = if session.scene_ready_to_finish().is_some() {
            Command::FinishScene
        } else {
            Command::Step
        };
        apply(&state, &mut session, command).await?;
    }
    Ok(Json(SessionReport::from_session(&session)))
}

async fn report(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<SessionReport>> {
    match state.store.get_as(DocumentKind::Report, &id) {
        Ok(r) => Ok(Json(r)),
        Err(StoreError::NotFound { .. }) => {
            let session: Session = state.store.get_as(DocumentKind::Session, &id)?;
            Ok(Json(SessionReport::from_session(&session)))
        }
        Err(e) => Err(e.into()),
    }
}

async fn mark(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<(StatusCode, Json<ValueMark>)> {
    let request: MarkRequest = parse_body(&body)?;
    let handle = state.handle(&id)?;
    let mut session = handle.lock().await;
    if let Some(existing) = session.marks.iter().find(|m| m.id == request.target_id) {
        return Ok((StatusCode::OK, Json(existing.clone())));
    }
    let mut next = session.clone();
    let from = next.events.len();
    let created = next.mark_value(&request.target_id, &*state.clock)?;
    state.commit(&next, from)?;
    *session = next;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn marks(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Vec<ValueMark>>> {
    Ok(Json(state.store.get_as(DocumentKind::Marks, &id)?))
}

async fn export(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    Ok(Json(state.store.get(DocumentKind::Session, &id)?.payload))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default = "yes")]
    follow: bool,
    #[serde(default)]
    from: Option<usize>,
}

fn yes() -> bool {
    true
}

fn sse_event(index: usize, event: &SessionEvent) -> Event {
    let (name, data) = match event {
        SessionEvent::Step(r) => ("step", serde_json::to_string(r)),
        SessionEvent::Posthoc(r) => ("posthoc", serde_json::to_string(r)),
        SessionEvent::Mark(m) => ("mark", serde_json::to_string(m)),
    };
    Event::default()
        .id(index.to_string())
        .event(name)
        .data(data.expect("event serializes"))
}

/// Replays stored events, then (with `follow`) forwards live ones. A
/// reconnecting client resumes with `Last-Event-ID` or `?from=`.
async fn events(
    State(state): Shared,
    Path(id): Path<String>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<usize>().ok())
        .map(|last| last + 1);
    let start = query.from.or(resume).unwrap_or(0);
    // Subscribe before reading so nothing committed in between is lost.
    let rx = state.channel(&id).subscribe();
    let session: Session = state.store.get_as(DocumentKind::Session, &id)?;
    let stored = session.events.len();
    let replay: Vec<Result<Event, Infallible>> = session
        .events
        .iter()
        .enumerate()
        .skip(start)
        .map(|(i, e)| Ok(sse_event(i, e)))
        .collect();
    let follow = query.follow;
    let live = stream::unfold((rx, stored.max(start)), move |(mut rx, next)| async move {
        if !follow {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok((i, _)) if i < next => continue,
                Ok((i, event)) => return Some((Ok(sse_event(i, &event)), (rx, i + 1))),
                Err(broadcast::error::RecvError::Lagged(_)) | Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream::iter(replay).chain(live)).keep_alive(KeepAlive::default()))
}
