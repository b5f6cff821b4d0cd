//! HTTP API over the annotation store.
//!
//! | Method | Path | |
//! |---|---|---|
//! | GET | `/memes` | every meme with its version and who has saved a record |
//! | GET | `/memes/{id}/task` | meme, graph, the caller's saved record, version |
//! | POST | `/memes/{id}/verdicts` | `{record, expected_version}` → `{version}` |
//! | GET | `/agreement?a=&b=&memes=&category=` | agreement report between two annotators |
//! | GET | `/kb/search?q=` | knowledge-base candidates in linking order |
//!
//! The caller names itself in the `x-annotator-id` header. Errors are JSON
//! objects with a machine-readable `code` and a `message`.

pub mod store;

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use memegraphs_core::graph_ops::{AgreementReport, AgreementTable, Category};
use memegraphs_core::kb::KbClient;
use memegraphs_core::model::{AnnotationRecord, Split};
use memegraphs_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use store::{FileLog, LogSink, MemoryLog, Snapshot, Store, StoreError, Task};

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub kb: Option<Arc<KbClient>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            extra: Value::Null,
        }
    }

    fn with(mut self, extra: Value) -> Self {
        self.extra = extra;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"code": self.code, "message": self.message});
        if let Value::Object(extra) = self.extra {
            body.as_object_mut().unwrap().extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::UnknownMeme(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_meme", msg),
            StoreError::Conflict { current_version } => ApiError::new(StatusCode::CONFLICT, "version_conflict", msg)
                .with(json!({"current_version": current_version})),
            StoreError::Invalid(problems) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_record", msg).with(json!({"problems": problems}))
            }
            StoreError::Io(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", msg),
        }
    }
}

fn annotator(headers: &HeaderMap) -> Result<String, ApiError> {
    headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing_annotator", format!("{ANNOTATOR_HEADER} header required")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/memes", get(list_memes))
        .route("/memes/{id}/task", get(get_task))
        .route("/memes/{id}/verdicts", post(submit_verdicts))
        .route("/agreement", get(agreement))
        .route("/kb/search", get(kb_search))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MemeSummary {
    pub id: String,
    pub text: String,
    pub image_ref: Option<String>,
    pub split: Split,
    pub version: u64,
    pub disregarded: bool,
    pub annotators: Vec<String>,
}

async fn list_memes(State(state): State<AppState>) -> Json<Vec<MemeSummary>> {
    let snap = state.store.snapshot();
    Json(
        state
            .store
            .memes()
            .map(|m| MemeSummary {
                id: m.id.clone(),
                text: m.text.clone(),
                image_ref: m.image_ref.clone(),
                split: m.split,
                version: snap.version(&m.id),
                disregarded: state.store.graph(&m.id).is_some_and(|g| g.empty),
                annotators: snap.annotators(&m.id),
            })
            .collect(),
    )
}

async fn get_task(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Json<Task>, ApiError> {
    let who = annotator(&headers)?;
    Ok(Json(state.store.task(&id, &who)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub record: AnnotationRecord,
    pub expected_version: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub version: u64,
}

async fn submit_verdicts(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> Result<Json<SubmitResponse>, ApiError> {
    let who = annotator(&headers)?;
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    if state.store.meme(&id).is_none() {
        return Err(StoreError::UnknownMeme(id).into());
    }
    let mut problems = Vec::new();
    if req.record.meme_id != id {
        problems.push(format!("record is for meme {}, not {id}", req.record.meme_id));
    }
    if req.record.annotator_id != who {
        problems.push(format!("record belongs to {}, not {who}", req.record.annotator_id));
    }
    if !problems.is_empty() {
        return Err(StoreError::Invalid(problems).into());
    }
    let store = state.store.clone();
    // The log write syncs to disk; keep it off the async workers.
    let version = tokio::task::spawn_blocking(move || store.submit(req.record, req.expected_version))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(SubmitResponse { version }))
}

#[derive(Debug, Deserialize)]
struct AgreementQuery {
    a: String,
    b: String,
    /// Comma-separated meme ids; defaults to every meme either annotator
    /// has saved.
    memes: Option<String>,
    category: Option<String>,
}

async fn agreement(
    State(state): State<AppState>,
    Query(q): Query<AgreementQuery>,
) -> Result<Json<AgreementReport>, ApiError> {
    let category: Category = match q.category.as_deref() {
        None => Category::Objects,
        Some(s) => s
            .parse()
            .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e))?,
    };
    let snap = state.store.snapshot();
    let ids: BTreeSet<String> = match &q.memes {
        Some(list) => list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect(),
        None => state
            .store
            .memes()
            .filter(|m| snap.record(&m.id, &q.a).is_some() || snap.record(&m.id, &q.b).is_some())
            .map(|m| m.id.clone())
            .collect(),
    };
    if let Some(unknown) = ids.iter().find(|id| state.store.meme(id).is_none()) {
        return Err(StoreError::UnknownMeme(unknown.clone()).into());
    }
    let mut missing = Vec::new();
    let mut table = AgreementTable::new(category);
    for id in &ids {
        match (snap.record(id, &q.a), snap.record(id, &q.b)) {
            (Some(ra), Some(rb)) => {
                let graph = state.store.graph(id).expect("every meme has a graph");
                table.add_on_graph(graph, ra, rb).map_err(agreement_error)?
            }
            (ra, rb) => {
                if ra.is_none() {
                    missing.push(format!("{id} ({})", q.a));
                }
                if rb.is_none() {
                    missing.push(format!("{id} ({})", q.b));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "incomplete_coverage",
            format!("no record for {}", missing.join(", ")),
        )
        .with(json!({"missing": missing})));
    }
    Ok(Json(table.report().map_err(agreement_error)?))
}

fn agreement_error(e: CoreError) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "agreement_error", e.to_string())
}

#[derive(Debug, Deserialize)]
struct SearchQuery {
    q: String,
}

async fn kb_search(
    State(state): State<AppState>,
    Query(q): Query<SearchQuery>,
) -> Result<Json<Vec<memegraphs_core::kb::KbHit>>, ApiError> {
    let kb = state
        .kb
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "kb_unavailable", "no knowledge base configured"))?;
    let query = q.q.trim().to_string();
    if query.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "empty query"));
    }
    let hits = tokio::task::spawn_blocking(move || kb.search(&query))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    match hits {
        Ok(h) => Ok(Json(h)),
        Err(e @ CoreError::CacheMiss(_)) => Err(ApiError::new(StatusCode::NOT_FOUND, "kb_cache_miss", e.to_string())),
        Err(e) => Err(ApiError::new(StatusCode::BAD_GATEWAY, "kb_error", e.to_string())),
    }
}
