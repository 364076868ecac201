//! HTTP front of the annotation session. Bodies are JSON.
//!
//! * `GET /api/queue/next?band=LO,HI&unannotated=true` returns a pair
//!   descriptor, or 204 once the queue is exhausted.
//! * `POST /api/verdict` takes `{pair_id, verdict, duplicate, annotator,
//!   timestamp?}` and answers 201, 409 on a rule violation, 404 for an unknown
//!   pair, 400 for a malformed body.
//! * `GET /api/progress` returns annotated/total and per-verdict counts.
//! * `GET /images/{dataset}/{image_id}` serves files under the dataset root.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use leakage_audit::annotation::{parse_timestamp, AnnotationRecord, AnnotationSession, QueueFilter, Verdict};
use leakage_audit::Error;
use serde::Deserialize;

use crate::config::AuditConfig;

pub struct AppState {
    pub session: RwLock<AnnotationSession>,
    pub config: AuditConfig,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/queue/next", get(next_pair))
        .route("/api/verdict", post(post_verdict))
        .route("/api/progress", get(progress))
        .route("/images/{dataset}/{*image_id}", get(image))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

/// Parses `LO,HI` with `LO <= HI`.
pub fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let parsed = s
        .split_once(',')
        .and_then(|(lo, hi)| Some((lo.trim().parse::<f64>().ok()?, hi.trim().parse::<f64>().ok()?)));
    match parsed {
        Some((lo, hi)) if lo <= hi => Ok((lo, hi)),
        _ => Err(format!("band must be LO,HI with LO <= HI, got {s:?}")),
    }
}

fn parse_filter(q: &HashMap<String, String>, default: QueueFilter) -> Result<QueueFilter, String> {
    let mut f = default;
    if let Some(band) = q.get("band") {
        f.band = Some(parse_band(band)?);
    }
    if let Some(u) = q.get("unannotated") {
        f.unannotated_only = match u.as_str() {
            "true" | "1" => true,
            "false" | "0" => false,
            _ => return Err(format!("unannotated must be true or false, got {u:?}")),
        };
    }
    Ok(f)
}

async fn next_pair(State(state): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> Response {
    let session = state.session.read().unwrap();
    let filter = match parse_filter(&q, session.options().filter) {
        Ok(f) => f,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    match session.next_pair(&filter) {
        Some(d) => Json(d).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    pair_id: String,
    verdict: Verdict,
    #[serde(default)]
    duplicate: bool,
    annotator: String,
    timestamp: Option<String>,
}

async fn post_verdict(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let body: VerdictBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed verdict: {e}")),
    };
    let timestamp = match body.timestamp.as_deref().map(parse_timestamp) {
        None => Utc::now(),
        Some(Ok(t)) => t,
        Some(Err(e)) => return error(StatusCode::BAD_REQUEST, e),
    };
    let record = AnnotationRecord {
        pair_id: body.pair_id,
        verdict: body.verdict,
        duplicate: body.duplicate,
        annotator: body.annotator,
        timestamp,
    };
    let result = state.session.write().unwrap().record_verdict(record);
    match result {
        Ok(ack) => (StatusCode::CREATED, Json(ack)).into_response(),
        Err(e @ Error::Rule(_)) => error(StatusCode::CONFLICT, e.to_string()),
        Err(e @ Error::UnknownPairs(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ Error::Invalid(_)) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn progress(State(state): State<Arc<AppState>>) -> Response {
    Json(state.session.read().unwrap().progress()).into_response()
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("bmp") => "image/bmp",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

/// Relative path made only of normal components, or `None`.
fn safe_relative(image_id: &str) -> Option<PathBuf> {
    let p = Path::new(image_id);
    let ok = !image_id.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)));
    ok.then(|| p.to_path_buf())
}

async fn image(State(state): State<Arc<AppState>>, UrlPath((dataset, image_id)): UrlPath<(String, String)>) -> Response {
    let Some(rel) = safe_relative(&image_id) else {
        return error(StatusCode::BAD_REQUEST, format!("bad image id {image_id:?}"));
    };
    let Some(root) = state.config.image_root(&dataset) else {
        return error(StatusCode::NOT_FOUND, format!("no image root for dataset {dataset}"));
    };
    let path = root.join(&rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            error(StatusCode::NOT_FOUND, format!("{dataset}/{image_id} not found"))
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}
