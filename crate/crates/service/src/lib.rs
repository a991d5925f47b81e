//! HTTP session API over a loaded [`PolicyBundle`].
//!
//! Sessions live in memory. Each one sits behind its own async mutex and
//! observations are applied with `try_lock`: a second submission arriving
//! while one is still being processed is rejected with `session_busy`
//! rather than queued, and the client retries.
//!
//! Routes: `POST /sessions`, `POST /sessions/{id}/observe`,
//! `GET /sessions/{id}`, `DELETE /sessions/{id}`, `GET /libraries`,
//! `GET /health`.

pub mod error;
pub mod payload;
pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::sync::{Mutex, RwLock};

use tafa_core::policy::PolicyBundle;

pub use error::ApiError;
use payload::{
    schema, CreateSession, Health, LibraryList, LibrarySummary, Observe, SessionCreated, SessionView, StepPayload,
    Versioned,
};
pub use session::Session;

type Reply<T> = Result<Json<Versioned<T>>, ApiError>;

pub struct AppState {
    libraries: BTreeMap<String, Arc<PolicyBundle>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

impl AppState {
    /// Libraries keyed by id. Duplicate ids keep the last bundle.
    pub fn new(libraries: impl IntoIterator<Item = (String, PolicyBundle)>) -> Arc<Self> {
        Arc::new(AppState {
            libraries: libraries.into_iter().map(|(id, b)| (id, Arc::new(b))).collect(),
            sessions: RwLock::new(HashMap::new()),
            counter: AtomicU64::new(0),
        })
    }

    fn fresh_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("{:012x}-{n:04x}", rand::random::<u64>() & 0xffff_ffff_ffff)
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::session_not_found(id))
    }

    /// Views of every session, for snapshots.
    pub async fn snapshot(&self) -> Vec<SessionView> {
        let sessions: Vec<_> = self.sessions.read().await.values().cloned().collect();
        let mut views = Vec::with_capacity(sessions.len());
        for s in sessions {
            views.push(s.lock().await.view());
        }
        views.sort_by(|a, b| a.created_at_ms.cmp(&b.created_at_ms).then(a.id.cmp(&b.id)));
        views
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/libraries", get(libraries))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(abort_session))
        .route("/sessions/{id}/observe", post(observe))
        .with_state(state)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::invalid_request(e.body_text()))
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Versioned<Health>> {
    Json(Versioned::new(
        schema::HEALTH,
        Health {
            status: "ok".into(),
            service_version: env!("CARGO_PKG_VERSION").into(),
            libraries: app.libraries.len(),
            sessions: app.sessions.read().await.len(),
        },
    ))
}

pub fn summarize(id: &str, b: &PolicyBundle) -> LibrarySummary {
    LibrarySummary {
        id: id.to_string(),
        dataset: b.name.clone(),
        lambda: b.library.lambda,
        k: b.k,
        template_count: b.library.templates.len(),
        o_init: b.library.o_init,
        feature_names: b.feature_names.clone(),
        class_names: b.class_names.clone(),
        feature_costs: (0..b.dim()).map(|d| b.costs.cost(d)).collect(),
        templates: b.library.templates.iter().map(|t| t.indices().to_vec()).collect(),
    }
}

async fn libraries(State(app): State<Arc<AppState>>) -> Json<Versioned<LibraryList>> {
    let libraries = app.libraries.iter().map(|(id, b)| summarize(id, b)).collect();
    Json(Versioned::new(schema::LIBRARIES, LibraryList { libraries }))
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Versioned<SessionCreated>>), ApiError> {
    let req = body(payload)?;
    let bundle = app
        .libraries
        .get(&req.library_id)
        .cloned()
        .ok_or_else(|| ApiError::library_not_found(&req.library_id))?;
    let id = app.fresh_id();
    let session = Session::new(id.clone(), req.library_id, bundle, req.lambda, req.k)?;
    let request = session.pending_request().expect("fresh sessions request the initial feature");
    let view = session.view();
    app.sessions.write().await.insert(id, Arc::new(Mutex::new(session)));
    Ok((
        StatusCode::CREATED,
        Json(Versioned::new(schema::CREATED, SessionCreated { session: view, request })),
    ))
}

async fn observe(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<Observe>, JsonRejection>,
) -> Reply<StepPayload> {
    let req = body(payload)?;
    let session = app.session(&id).await?;
    let mut guard = session.try_lock().map_err(|_| ApiError::session_busy(&id))?;
    let value = session::parse_value(&req.value)?;
    let step = guard.observe(req.feature, value)?;
    Ok(Json(Versioned::new(schema::STEP, step)))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Reply<SessionView> {
    let session = app.session(&id).await?;
    let view = session.lock().await.view();
    Ok(Json(Versioned::new(schema::SESSION, view)))
}

async fn abort_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Reply<SessionView> {
    let session = app.session(&id).await?;
    let mut guard = session.lock().await;
    guard.abort()?;
    Ok(Json(Versioned::new(schema::SESSION, guard.view())))
}

/// Serves until ctrl-c. With `snapshot` set, all session views are written
/// there as one JSON file on shutdown.
pub async fn serve(listener: TcpListener, app: Arc<AppState>, snapshot: Option<PathBuf>) -> std::io::Result<()> {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    serve_until(listener, app, ctrl_c, snapshot).await
}

pub async fn serve_until(
    listener: TcpListener,
    app: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
    snapshot: Option<PathBuf>,
) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::clone(&app)))
        .with_graceful_shutdown(shutdown)
        .await?;
    if let Some(path) = snapshot {
        write_snapshot(&app, &path).await?;
    }
    Ok(())
}

pub async fn write_snapshot(app: &AppState, path: &std::path::Path) -> std::io::Result<()> {
    let views = app.snapshot().await;
    let doc = Versioned::new("tafa.session_snapshot", serde_json::json!({ "sessions": views }));
    let text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
    std::fs::write(path, text)
}

/// Binds `addr` and reports the bound address, so callers asking for port 0
/// learn the ephemeral port before serving.
pub async fn bind(addr: SocketAddr) -> std::io::Result<(SocketAddr, TcpListener)> {
    let listener = TcpListener::bind(addr).await?;
    Ok((listener.local_addr()?, listener))
}
