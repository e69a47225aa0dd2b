use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;

use ircopilot_core::engine::{AblationToggles, EngineConfig, EngineError, EngineState, Event, EventKind, OverrideAction, SessionSetup};
use ircopilot_core::guidance::lint_commands;
use ircopilot_core::irt::{render_irt, OsTag};
use ircopilot_core::provider::{MockScript, ProviderKind};

use crate::providers::ProviderSpec;
use crate::runtime::{Input, Services, SessionHandle};
use crate::store::{SessionStatus, Store};
use crate::ServiceError;

#[derive(Clone)]
pub struct AppState {
    pub store: Store,
    pub services: Arc<Services>,
    pub sessions: Arc<RwLock<HashMap<String, SessionHandle>>>,
    counter: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(store: Store, services: Arc<Services>) -> Self {
        AppState { store, services, sessions: Arc::default(), counter: Arc::default() }
    }

    pub fn handle(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().expect("registry lock").get(id).cloned()
    }

    fn fresh_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("s{}-{n}", chrono::Utc::now().format("%Y%m%d%H%M%S"))
    }

    /// Live state when the session runs here, else the folded log.
    fn state_of(&self, id: &str) -> Result<(EngineState, Option<SessionHandle>), ApiError> {
        if let Some(h) = self.handle(id) {
            if let Some(state) = h.with_view(|v| v.state.clone()) {
                return Ok((state, Some(h)));
            }
        }
        Ok((self.store.replay_session(id)?, None))
    }
}

pub struct ApiError(ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

pub fn status_of(err: &ServiceError) -> StatusCode {
    match err {
        ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
        ServiceError::SessionExists(_) | ServiceError::NotLive(_) | ServiceError::StatusTransition { .. } => {
            StatusCode::CONFLICT
        }
        ServiceError::InvalidInput(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ServiceError::Engine(e) => match e {
            EngineError::InvalidStepInput { .. } | EngineError::SessionFinished | EngineError::NotPaused => StatusCode::CONFLICT,
            EngineError::EmptyGoal | EngineError::InvalidToggles | EngineError::Cost(_) | EngineError::InvalidOverride(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            EngineError::Provider(_) | EngineError::ClassificationFailure { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        },
        ServiceError::Provider(ircopilot_core::provider::ProviderError::InvalidConfig(_)) => StatusCode::UNPROCESSABLE_ENTITY,
        ServiceError::Provider(_) => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(&self.0), Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

/// JSON body whose every rejection maps to 422.
pub struct Payload<T>(pub T);

impl<S: Send + Sync, T: serde::de::DeserializeOwned> FromRequest<S> for Payload<T> {
    type Rejection = Response;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Payload(v)),
            Err(rejection) => {
                let rejection: JsonRejection = rejection;
                Err((StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": rejection.body_text() }))).into_response())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    pub goal: String,
    pub os_tag: OsTag,
    #[serde(default)]
    pub system_info: String,
    #[serde(default)]
    pub provider: Option<ProviderKind>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub mock_script: Option<MockScript>,
    #[serde(default)]
    pub toggles: Option<AblationToggles>,
    #[serde(default)]
    pub config: Option<EngineConfig>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TextInput {
    pub text: String,
    #[serde(default)]
    pub wait: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct OverrideInput {
    pub action: OverrideAction,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub wait: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ack {
    pub session_id: String,
    pub step: ircopilot_core::engine::Step,
    pub status: SessionStatus,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(start_session).get(list_sessions))
        .route("/sessions/{id}/irt", get(get_irt))
        .route("/sessions/{id}/guidance", get(get_guidance))
        .route("/sessions/{id}/result", post(post_result))
        .route("/sessions/{id}/planner-message", post(post_planner_message))
        .route("/sessions/{id}/review-override", post(post_override))
        .route("/sessions/{id}/events", get(stream_events))
        .route("/sessions/{id}/report", get(get_report))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|_| ServiceError::WorkerGone)?.map_err(ApiError)
}

async fn start_session(State(app): State<AppState>, Payload(req): Payload<StartRequest>) -> Result<impl IntoResponse, ApiError> {
    let spec = match (req.provider.unwrap_or(ProviderKind::Mock), req.mock_script) {
        (ProviderKind::Mock, Some(script)) => ProviderSpec::Mock { script },
        (ProviderKind::Mock, None) => return Err(ServiceError::InvalidInput("mock sessions need `mock_script`".into()).into()),
        (kind, _) => ProviderSpec::live(kind, req.model.as_deref())?,
    };
    let id = req.session_id.unwrap_or_else(|| app.fresh_id());
    if app.handle(&id).is_some() || app.store.exists(&id) {
        return Err(ServiceError::SessionExists(id).into());
    }
    let mut setup = SessionSetup::new(id.clone(), req.goal, req.os_tag);
    setup.system_info = req.system_info;
    setup.toggles = req.toggles.unwrap_or_default();
    setup.config = req.config.unwrap_or_default();
    let store = app.store.clone();
    let services = app.services.clone();
    let handle = blocking(move || SessionHandle::start(&store, setup, &spec, services)).await?;
    let step = handle.with_view(|v| v.step()).unwrap_or(ircopilot_core::engine::Step::PlanUpdate);
    app.sessions.write().expect("registry lock").insert(id.clone(), handle);
    Ok((StatusCode::CREATED, Json(Ack { session_id: id, step, status: SessionStatus::of(step) })))
}

async fn list_sessions(State(app): State<AppState>) -> Result<impl IntoResponse, ApiError> {
    let manifests = app.store.list()?;
    let live: Vec<_> = manifests
        .into_iter()
        .map(|m| {
            let live = app.handle(&m.session_id).is_some();
            json!({ "manifest": m, "live": live })
        })
        .collect();
    Ok(Json(live))
}

async fn get_irt(State(app): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let (state, _) = app.state_of(&id)?;
    Ok(Json(json!({
        "session_id": id,
        "revision": state.irt.revision,
        "rendered": render_irt(&state.irt),
        "irt": state.irt,
    })))
}

async fn get_guidance(State(app): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let (state, _) = app.state_of(&id)?;
    let guidance = state.pending_guidance.clone();
    let commands: Vec<_> = guidance.iter().flat_map(|g| g.commands().cloned()).collect();
    let lint = lint_commands(&commands);
    Ok(Json(json!({
        "session_id": id,
        "step": state.step,
        "guidance": guidance,
        "commands": commands.iter().map(|c| c.command.clone()).collect::<Vec<_>>(),
        "lint": lint,
    })))
}

fn live_handle(app: &AppState, id: &str) -> Result<SessionHandle, ApiError> {
    match app.handle(id) {
        Some(h) => Ok(h),
        None if app.store.exists(id) => Err(ServiceError::NotLive(id.to_string()).into()),
        None => Err(ServiceError::UnknownSession(id.to_string()).into()),
    }
}

async fn submit(app: AppState, id: String, input: Input, wait: bool) -> Result<impl IntoResponse, ApiError> {
    let handle = live_handle(&app, &id)?;
    let step = blocking(move || handle.submit(input, wait)).await?;
    Ok(Json(Ack { session_id: id, step, status: SessionStatus::of(step) }))
}

async fn post_result(State(app): State<AppState>, Path(id): Path<String>, Payload(body): Payload<TextInput>) -> Result<impl IntoResponse, ApiError> {
    submit(app, id, Input::Result(body.text), body.wait).await
}

async fn post_planner_message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Payload(body): Payload<TextInput>,
) -> Result<impl IntoResponse, ApiError> {
    submit(app, id, Input::PlannerMessage(body.text), body.wait).await
}

async fn post_override(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Payload(body): Payload<OverrideInput>,
) -> Result<impl IntoResponse, ApiError> {
    submit(app, id, Input::Override { action: body.action, note: body.note }, body.wait).await
}

async fn get_report(State(app): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let (state, handle) = app.state_of(&id)?;
    let (busy, last_error, events) = match &handle {
        Some(h) => h.with_view(|v| (v.busy, v.last_error.clone(), v.events.len())),
        None => (false, None, state.last_seq as usize),
    };
    let manifest = app.store.manifest(&id)?;
    Ok(Json(json!({
        "session_id": id,
        "status": manifest.status,
        "step": state.step,
        "model": state.model,
        "live": handle.is_some(),
        "busy": busy,
        "last_error": last_error,
        "events": events,
        "irt_revision": state.irt.revision,
        "tokens": state.totals.usage,
        "cost_usd": state.totals.cost_usd,
        "reasoning_time_s": state.totals.latency_ms as f64 / 1000.0,
        "calls": state.totals.calls,
        "resolved": state.irt.resolved_objectives(),
        "paused": state.paused,
    })))
}

struct Tail {
    rx: broadcast::Receiver<Event>,
    handle: SessionHandle,
    last: u64,
    pending: VecDeque<Event>,
    done: bool,
}

impl Tail {
    /// Next event after `last`; a lagging receiver catches up from the
    /// session's own event list.
    async fn next(&mut self) -> Option<Event> {
        if self.done {
            return None;
        }
        loop {
            let event = match self.pending.pop_front() {
                Some(e) => e,
                None => match self.rx.recv().await {
                    Ok(e) => e,
                    Err(broadcast::error::RecvError::Lagged(_)) => {
                        let last = self.last;
                        self.pending = self.handle.with_view(|v| v.events.iter().filter(|e| e.seq > last).cloned().collect());
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => return None,
                },
            };
            if event.seq <= self.last {
                continue;
            }
            self.last = event.seq;
            self.done = is_done(&event);
            return Some(event);
        }
    }
}

fn frame(event: &Event) -> SseEvent {
    SseEvent::default()
        .event(event.kind.name())
        .id(event.seq.to_string())
        .json_data(event)
        .expect("events serialize")
}

fn is_done(event: &Event) -> bool {
    matches!(event.kind, EventKind::SessionDone { .. })
}

/// Stored events first, then live ones; the stream ends after SessionDone.
async fn stream_events(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let handle = app.handle(&id);
    let (history, live) = match &handle {
        Some(h) => {
            let (events, rx) = h.subscribe();
            (events, Some(rx))
        }
        None => (app.store.load_events(&id)?, None),
    };
    let finished = history.iter().any(is_done);
    let last = history.last().map_or(0, |e| e.seq);
    let head = stream::iter(history.into_iter().map(|e| Ok(frame(&e))));
    let tail = match (live, handle) {
        (Some(rx), Some(h)) if !finished => {
            let tail = Tail { rx, handle: h, last, pending: VecDeque::new(), done: false };
            stream::unfold(tail, |mut t| async move { t.next().await.map(|e| (Ok(frame(&e)), t)) }).boxed()
        }
        _ => stream::empty().boxed(),
    };
    Ok(Sse::new(head.chain(tail)).keep_alive(KeepAlive::default()))
}

pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
