use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::log::DecisionLog;
use crate::render::{encode_png, render_overlay};
use crate::session::{DecisionRequest, DecisionResponse, Session, SessionError, TaskStatus};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const DEFAULT_K: usize = 5;

/// Shared service state. Reads take the session lock; decisions are
/// serialized through the writer mutex, which owns the log.
#[derive(Clone)]
pub struct AppState {
    session: Arc<RwLock<Session>>,
    writer: Arc<Mutex<Option<DecisionLog>>>,
}

impl AppState {
    /// `log` of `None` keeps decisions in memory only.
    pub fn new(session: Session, log: Option<DecisionLog>) -> Self {
        Self { session: Arc::new(RwLock::new(session)), writer: Arc::new(Mutex::new(log)) }
    }

    pub fn snapshot(&self) -> Session {
        self.session.read().expect("session lock").clone()
    }

    /// Validate, persist, then apply one decision.
    pub async fn decide(&self, spine: u64, req: DecisionRequest) -> Result<DecisionResponse, SessionError> {
        let mut writer = self.writer.lock().await;
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let record = self.session.read().expect("session lock").prepare(spine, &req, now)?;
        if let Some(log) = writer.as_mut() {
            log.append(&record)?;
        }
        let mut s = self.session.write().expect("session lock");
        s.apply(record.clone());
        Ok(DecisionResponse {
            task: s.summary(spine)?,
            assigned: s.reviewed_assignment().shaft_of(spine),
            score: s.score()?,
            record,
        })
    }
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            SessionError::UnknownSpine(_) => StatusCode::NOT_FOUND,
            SessionError::NotACandidate { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct TaskQuery {
    status: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct TaskDetailQuery {
    k: Option<usize>,
    z: Option<usize>,
}

fn parse_status(s: Option<&str>) -> Result<Option<TaskStatus>, SessionError> {
    match s {
        None | Some("") | Some("all") => Ok(None),
        Some("pending") => Ok(Some(TaskStatus::Pending)),
        Some("decided") => Ok(Some(TaskStatus::Decided)),
        Some("skipped") => Ok(Some(TaskStatus::Skipped)),
        Some(other) => Err(SessionError::BadRequest(format!("unknown status {other:?}"))),
    }
}

async fn list_tasks(State(st): State<AppState>, Query(q): Query<TaskQuery>) -> Result<Response, ApiError> {
    let status = parse_status(q.status.as_deref())?;
    let page = st.session.read().expect("session lock").list_tasks(
        status,
        q.page.unwrap_or(0),
        q.page_size.unwrap_or(DEFAULT_PAGE_SIZE),
    )?;
    Ok(Json(page).into_response())
}

async fn get_task(
    State(st): State<AppState>,
    Path(spine): Path<u64>,
    Query(q): Query<TaskDetailQuery>,
) -> Result<Response, ApiError> {
    let task = st.session.read().expect("session lock").task(spine, q.k.unwrap_or(DEFAULT_K), q.z)?;
    Ok(Json(task).into_response())
}

async fn post_decision(
    State(st): State<AppState>,
    Path(spine): Path<u64>,
    Json(req): Json<DecisionRequest>,
) -> Result<Response, ApiError> {
    Ok(Json(st.decide(spine, req).await?).into_response())
}

async fn get_score(State(st): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(st.session.read().expect("session lock").score()?).into_response())
}

async fn get_render(
    State(st): State<AppState>,
    Path((spine, candidate, z)): Path<(u64, u64, usize)>,
) -> Result<Response, ApiError> {
    let img = render_overlay(&st.session.read().expect("session lock"), spine, candidate, z)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], encode_png(&img)).into_response())
}

/// Routes under `/api`, with CORS for `origin` (any origin when `None`).
pub fn router(state: AppState, origin: Option<&str>) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => cors.allow_origin(AllowOrigin::exact(o)),
        None => cors.allow_origin(Any),
    };
    Router::new()
        .route("/api/tasks", get(list_tasks))
        .route("/api/tasks/{spine_id}", get(get_task))
        .route("/api/tasks/{spine_id}/decision", post(post_decision))
        .route("/api/score", get(get_score))
        .route("/api/render/{spine_id}/{candidate}/{z}", get(get_render))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState, origin: Option<&str>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("proofreading service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, origin)).await
}
