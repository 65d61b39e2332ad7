//! Review HTTP API. Values leave the server masked; decisions are appended
//! to the run store before the in-memory board changes.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};

use leakaudit::store::{RunStore, Stream};
use leakaudit::verification::review::{DecisionInput, ListFilter, ReviewBoard, ReviewError};
use leakaudit::{AttributeId, CandidateStatus};

pub const DEFAULT_PER_PAGE: usize = 50;

pub struct ReviewState {
    board: Mutex<ReviewBoard>,
    store: RunStore,
}

impl ReviewState {
    pub fn new(board: ReviewBoard, store: RunStore) -> Self {
        ReviewState { board: Mutex::new(board), store }
    }
}

pub fn router(state: Arc<ReviewState>) -> Router {
    Router::new()
        .route("/api/candidates", get(list))
        .route("/api/candidates/:id", get(show))
        .route("/api/candidates/:id/decision", post(decide))
        .route("/api/runs/:id/summary", get(summary))
        .with_state(state)
}

#[derive(Serialize)]
struct ApiError {
    error: String,
}

fn fail(code: StatusCode, msg: impl Into<String>) -> Response {
    (code, Json(ApiError { error: msg.into() })).into_response()
}

fn etag(version: u64) -> [(header::HeaderName, String); 1] {
    [(header::ETAG, format!("\"{version}\""))]
}

#[derive(Deserialize)]
struct ListQuery {
    status: Option<String>,
    attribute: Option<String>,
    page: Option<usize>,
    per_page: Option<usize>,
}

async fn list(State(st): State<Arc<ReviewState>>, Query(q): Query<ListQuery>) -> Response {
    let status = match q.status.as_deref().filter(|s| !s.is_empty()) {
        None => None,
        Some(s) => match CandidateStatus::parse(s) {
            Some(x) => Some(x),
            None => return fail(StatusCode::BAD_REQUEST, format!("unknown status `{s}`")),
        },
    };
    let filter = ListFilter { status, attribute: q.attribute.filter(|a| !a.is_empty()).map(AttributeId::new) };
    let board = st.board.lock().expect("board lock");
    Json(board.list(&filter, q.page.unwrap_or(1), q.per_page.unwrap_or(DEFAULT_PER_PAGE))).into_response()
}

async fn show(State(st): State<Arc<ReviewState>>, Path(id): Path<String>) -> Response {
    let board = st.board.lock().expect("board lock");
    match board.get(&id) {
        Some(v) => (etag(v.version), Json(v)).into_response(),
        None => fail(StatusCode::NOT_FOUND, format!("candidate `{id}` not found")),
    }
}

/// `If-Match` as a version number; quotes and a weak prefix are accepted.
fn if_match(headers: &HeaderMap) -> Result<Option<u64>, Response> {
    let Some(v) = headers.get(header::IF_MATCH) else {
        return Ok(None);
    };
    let s = v.to_str().unwrap_or_default().trim();
    let s = s.strip_prefix("W/").unwrap_or(s).trim_matches('"');
    s.parse().map(Some).map_err(|_| fail(StatusCode::BAD_REQUEST, format!("bad If-Match `{s}`")))
}

async fn decide(State(st): State<Arc<ReviewState>>, Path(id): Path<String>, headers: HeaderMap, Json(input): Json<DecisionInput>) -> Response {
    let version = match if_match(&headers) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let mut board = st.board.lock().expect("board lock");
    let entry = match board.prepare(&id, version, input, Utc::now()) {
        Ok(e) => e,
        Err(e) => return review_error(e),
    };
    if let Err(e) = st.store.append(Stream::Decisions, "review", &entry) {
        log::error!("cannot record decision for {id}: {e}");
        return fail(StatusCode::INTERNAL_SERVER_ERROR, "decision could not be recorded");
    }
    match board.commit(entry) {
        Ok(v) => (etag(v.version), Json(v)).into_response(),
        Err(e) => review_error(e),
    }
}

fn review_error(e: ReviewError) -> Response {
    let code = match &e {
        ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
        ReviewError::VersionRequired => StatusCode::PRECONDITION_REQUIRED,
        ReviewError::VersionMismatch { .. } => StatusCode::PRECONDITION_FAILED,
        ReviewError::Transition(_) => StatusCode::CONFLICT,
    };
    fail(code, e.to_string())
}

#[derive(Serialize)]
struct Summary {
    run_id: String,
    candidates: usize,
    by_status: BTreeMap<&'static str, usize>,
}

async fn summary(State(st): State<Arc<ReviewState>>, Path(id): Path<String>) -> Response {
    if id != st.store.run_id() {
        return fail(StatusCode::NOT_FOUND, format!("run `{id}` is not being served"));
    }
    let board = st.board.lock().expect("board lock");
    let counts = board.status_counts();
    let by_status = CandidateStatus::ALL.iter().map(|s| (s.as_str(), counts.get(s).copied().unwrap_or(0))).collect();
    Json(Summary { run_id: id, candidates: board.records().len(), by_status }).into_response()
}
