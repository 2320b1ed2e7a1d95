//! HTTP service for human review of refinement records.
//!
//! Routes:
//! - `GET  /api/records?stage=&status=&page=&page_size=`
//! - `POST /api/records/{id}/decision`
//! - `GET  /api/progress?stage=`
//! - `GET  /api/pairs/{id}`
//!
//! Errors are `{"code": ..., "message": ...}` with 404 (unknown record or
//! pair), 409 (record already decided) or 422 (invalid input). When a static
//! directory is configured it is served at `/`. There is no authentication;
//! bind to localhost.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::model::{Dataset, QAPair};
use crate::refine::Stage;
use crate::store::{Decision, DecisionAction, Progress, RecordStatus, RecordStore, RefinementRecord, StoreError};

pub const MAX_PAGE_SIZE: usize = 500;
pub const DEFAULT_PAGE_SIZE: usize = 50;

/// Shared state behind the router.
#[derive(Debug, Clone)]
pub struct ReviewState {
    store: Arc<RecordStore>,
    pairs: Arc<HashMap<String, QAPair>>,
}

impl ReviewState {
    pub fn new(store: Arc<RecordStore>) -> Self {
        ReviewState { store, pairs: Arc::default() }
    }

    /// Makes the pairs of `datasets` available at `/api/pairs/{id}`.
    pub fn with_datasets(mut self, datasets: &[Dataset]) -> Self {
        let mut pairs = HashMap::new();
        for ds in datasets {
            for p in &ds.pairs {
                pairs.insert(p.id.clone(), p.clone());
            }
        }
        self.pairs = Arc::new(pairs);
        self
    }

    pub fn store(&self) -> &Arc<RecordStore> {
        &self.store
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { code: code.into(), message: message.into(), status: status.as_u16() }
    }

    fn invalid(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::not_found(e.to_string()),
            StoreError::Conflict { .. } => ApiError::new(StatusCode::CONFLICT, "conflict", e.to_string()),
            StoreError::InvalidDecision(_) => ApiError::invalid(e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// Query parameters arrive as raw strings so that bad values produce our own
/// 422 body rather than the framework's plain-text rejection.
#[derive(Debug, Default, Deserialize)]
struct ListQuery {
    stage: Option<String>,
    status: Option<String>,
    page: Option<String>,
    page_size: Option<String>,
}

fn parse_opt<T: std::str::FromStr>(name: &str, raw: &Option<String>) -> Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    match raw.as_deref().map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|e| ApiError::invalid(format!("bad {name}: {e}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordPage {
    pub records: Vec<RefinementRecord>,
    pub total: usize,
    /// 1-based.
    pub page: usize,
    pub page_size: usize,
}

/// Filters and pages records, ordered by `created_at` then id.
pub fn list_records(
    store: &RecordStore,
    stage: Option<Stage>,
    status: Option<RecordStatus>,
    page: usize,
    page_size: usize,
) -> Result<RecordPage, ApiError> {
    if !(1..=MAX_PAGE_SIZE).contains(&page_size) {
        return Err(ApiError::invalid(format!("page_size must be in [1, {MAX_PAGE_SIZE}]")));
    }
    if page == 0 {
        return Err(ApiError::invalid("page starts at 1"));
    }
    let mut records: Vec<RefinementRecord> = store
        .snapshot()
        .into_iter()
        .filter(|r| stage.is_none_or(|s| r.stage == s) && status.is_none_or(|s| r.status == s))
        .collect();
    records.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
    let total = records.len();
    let records = records.into_iter().skip((page - 1) * page_size).take(page_size).collect();
    Ok(RecordPage { records, total, page, page_size })
}

async fn records_handler(
    State(state): State<ReviewState>,
    Query(q): Query<ListQuery>,
) -> Result<Json<RecordPage>, ApiError> {
    let stage = parse_opt::<Stage>("stage", &q.stage)?;
    let status = parse_opt::<RecordStatus>("status", &q.status)?;
    let page = parse_opt::<usize>("page", &q.page)?.unwrap_or(1);
    let page_size = parse_opt::<usize>("page_size", &q.page_size)?.unwrap_or(DEFAULT_PAGE_SIZE);
    list_records(&state.store, stage, status, page, page_size).map(Json)
}

/// Body of `POST /api/records/{id}/decision`. `record_id` may be omitted; if
/// present it must match the path.
#[derive(Debug, Clone, Deserialize)]
struct DecisionBody {
    #[serde(default)]
    record_id: Option<String>,
    action: DecisionAction,
    #[serde(default)]
    final_text: Option<String>,
    #[serde(default)]
    reviewer_note: Option<String>,
    expected_status: RecordStatus,
}

async fn decision_handler(
    State(state): State<ReviewState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RefinementRecord>, ApiError> {
    let body: DecisionBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::invalid(format!("bad decision body: {e}")))?;
    if body.record_id.as_deref().is_some_and(|r| r != id) {
        return Err(ApiError::invalid("record_id in body does not match the path"));
    }
    let decision = Decision {
        record_id: id,
        action: body.action,
        final_text: body.final_text,
        reviewer_note: body.reviewer_note,
        expected_status: body.expected_status,
    };
    // The store fsyncs before returning; keep that off the async workers.
    let store = state.store.clone();
    let updated = tokio::task::spawn_blocking(move || store.decide(&decision))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(updated))
}

#[derive(Debug, Default, Deserialize)]
struct ProgressQuery {
    stage: Option<String>,
}

async fn progress_handler(
    State(state): State<ReviewState>,
    Query(q): Query<ProgressQuery>,
) -> Result<Json<Progress>, ApiError> {
    let stage = parse_opt::<Stage>("stage", &q.stage)?;
    Ok(Json(state.store.progress(stage)))
}

async fn pair_handler(State(state): State<ReviewState>, Path(id): Path<String>) -> Result<Json<QAPair>, ApiError> {
    state.pairs.get(&id).cloned().map(Json).ok_or_else(|| ApiError::not_found(format!("pair `{id}` not found")))
}

async fn api_fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

/// Builds the router. `static_dir`, when given, is served at `/`.
pub fn router(state: ReviewState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/records", get(records_handler))
        .route("/records/{id}/decision", post(decision_handler))
        .route("/progress", get(progress_handler))
        .route("/pairs/{id}", get(pair_handler))
        .fallback(api_fallback)
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: ReviewState,
    static_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    log::info!("review server listening on http://{addr}");
    axum::serve(listener, router(state, static_dir)).with_graceful_shutdown(shutdown).await
}
