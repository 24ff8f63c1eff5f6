//! HTTP review service: scene listing, candidate details, human decisions.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::{ServeDir, ServeFile};

use segfactory::dataset::{DatasetManifest, DecisionError, ManifestScene, ManifestStore, Progress};
use segfactory::labeler::{CandidateKind, Decision, DecisionSource};

use crate::overlay_path;

#[derive(Clone)]
struct AppState {
    store: Arc<ManifestStore>,
    root: PathBuf,
}

/// Review API over `store`. `/files/*` serves the dataset directory; any
/// other path falls through to the UI bundle in `ui`, if given.
pub fn router(store: ManifestStore, ui: Option<PathBuf>) -> Router {
    let root = store.root();
    let state = AppState {
        store: Arc::new(store),
        root: root.clone(),
    };
    let api = Router::new()
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}", get(get_scene))
        .route("/scenes/{id}/decision", post(post_decision))
        .route("/progress", get(progress))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(state);
    let app = Router::new()
        .nest("/api", api)
        .nest_service("/files", ServeDir::new(root));
    match ui {
        Some(dir) => {
            let index = ServeFile::new(dir.join("index.html"));
            app.fallback_service(ServeDir::new(dir).fallback(index))
        }
        None => app.fallback(get(placeholder)),
    }
}

async fn placeholder() -> Html<&'static str> {
    Html("<!doctype html><title>segfactory review</title><p>No UI bundle configured; start with <code>--ui DIR</code>. The API lives under <a href=\"/api/progress\">/api</a>.</p>\n")
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        log::error!("request failed: {e}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

impl From<DecisionError> for ApiError {
    fn from(e: DecisionError) -> Self {
        let status = match &e {
            DecisionError::UnknownScene(_) => StatusCode::NOT_FOUND,
            DecisionError::NotLabeled(_) | DecisionError::Conflict { .. } => StatusCode::CONFLICT,
            DecisionError::Other(_) => return ApiError::internal(e),
        };
        ApiError::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn file_url(rel: &Path) -> String {
    format!("/files/{}", rel.to_string_lossy().replace('\\', "/"))
}

fn decision_source_str(s: Option<DecisionSource>) -> Option<&'static str> {
    s.map(|s| match s {
        DecisionSource::Human => "human",
        DecisionSource::Heuristic => "heuristic",
    })
}

fn scene_summary(index: usize, s: &ManifestScene) -> Value {
    json!({
        "scene_id": s.record.scene_id,
        "index": index,
        "class_id": s.record.class_id,
        "labeled": s.candidates.is_some(),
        "decision": s.decision().as_str(),
        "decision_source": decision_source_str(s.candidates.as_ref().and_then(|c| c.decision_source)),
        "revision": s.revision,
        "error": s.error,
        "image_url": file_url(&s.record.image_path),
    })
}

fn scene_detail(m: &DatasetManifest, root: &Path, index: usize) -> Value {
    let s = &m.scenes[index];
    let mut v = scene_summary(index, s);
    let class_name = m
        .categories
        .iter()
        .find(|c| c.id == s.record.class_id)
        .map(|c| c.name.clone());
    v["class_name"] = json!(class_name);
    v["background_url"] = json!(file_url(&s.record.background_path));
    v["turntable"] = json!(s.record.turntable);
    let mut overlays = serde_json::Map::new();
    let mut candidates = serde_json::Map::new();
    for kind in CandidateKind::ALL {
        let path = overlay_path(&s.record, kind);
        let url = root.join(&path).is_file().then(|| file_url(&path));
        overlays.insert(kind.as_str().into(), json!(url));
        if let Some(c) = &s.candidates {
            let masks = c.instances(kind);
            let areas: Vec<u64> = masks.iter().map(|m| m.count()).collect();
            let bboxes: Vec<Value> = masks
                .iter()
                .filter_map(|m| m.bbox())
                .map(|b| json!([b.x, b.y, b.w, b.h]))
                .collect();
            candidates.insert(
                kind.as_str().into(),
                json!({
                    "count": masks.len(),
                    "total_area": areas.iter().sum::<u64>(),
                    "areas": areas,
                    "bboxes": bboxes,
                }),
            );
        }
    }
    v["overlays"] = Value::Object(overlays);
    if let Some(c) = &s.candidates {
        v["width"] = json!(c.image_width);
        v["height"] = json!(c.image_height);
        v["turntable_area"] = json!(c.turntable_area);
        v["saliency_threshold"] = json!(c.saliency_threshold);
        v["saliency_degenerate"] = json!(c.saliency_degenerate);
        v["candidates"] = Value::Object(candidates);
    }
    v
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
    filter: Option<String>,
}

fn default_limit() -> usize {
    50
}

const MAX_LIMIT: usize = 500;

const FILTERS: [&str; 6] = ["all", "undecided", "decided", "rejected", "unlabeled", "errors"];

fn keep(filter: &str, s: &ManifestScene) -> bool {
    let d = s.decision();
    match filter {
        "undecided" => d == Decision::Undecided,
        "decided" => d.kind().is_some(),
        "rejected" => d == Decision::Reject,
        "unlabeled" => s.candidates.is_none(),
        "errors" => s.error.is_some(),
        _ => true,
    }
}

async fn list_scenes(State(st): State<AppState>, Query(q): Query<ListQuery>) -> ApiResult<Json<Value>> {
    let filter = q.filter.unwrap_or_else(|| "all".into());
    if !FILTERS.contains(&filter.as_str()) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("unknown filter {filter:?}; use one of {}", FILTERS.join(", ")),
        ));
    }
    if q.limit == 0 || q.limit > MAX_LIMIT {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("limit must lie in 1..={MAX_LIMIT}"),
        ));
    }
    let store = st.store.clone();
    let m = blocking(move || store.read().map_err(ApiError::internal)).await?;
    let matching: Vec<(usize, &ManifestScene)> =
        m.scenes.iter().enumerate().filter(|(_, s)| keep(&filter, s)).collect();
    let page: Vec<Value> = matching
        .iter()
        .skip(q.offset)
        .take(q.limit)
        .map(|(i, s)| scene_summary(*i, s))
        .collect();
    Ok(Json(json!({
        "total": matching.len(),
        "offset": q.offset,
        "limit": q.limit,
        "filter": filter,
        "scenes": page,
    })))
}

async fn get_scene(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let store = st.store.clone();
    let m = blocking(move || store.read().map_err(ApiError::internal)).await?;
    let index = m
        .scenes
        .iter()
        .position(|s| s.record.scene_id == id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene {id:?}")))?;
    Ok(Json(scene_detail(&m, &st.root, index)))
}

#[derive(Debug, Serialize, Deserialize)]
struct DecisionBody {
    choice: String,
    /// Revision the client saw; a newer one on the server is a conflict.
    #[serde(default)]
    revision: Option<u64>,
}

async fn post_decision(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let body: DecisionBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid body: {e}")))?;
    let decision = match body.choice.parse::<Decision>() {
        Ok(d) if d != Decision::Undecided => d,
        _ => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("invalid choice {:?}; use hsv, rgb, saliency or reject", body.choice),
            ))
        }
    };
    let store = st.store.clone();
    let root = st.root.clone();
    blocking(move || {
        let v = store.update(|m| {
            m.set_decision(&id, decision, DecisionSource::Human, body.revision)?;
            let index = m
                .scenes
                .iter()
                .position(|s| s.record.scene_id == id)
                .expect("scene just updated");
            Ok::<_, DecisionError>(scene_detail(m, &root, index))
        })?;
        log::info!("scene {} decision {} (human)", v["scene_id"], decision.as_str());
        Ok(Json(v))
    })
    .await
}

async fn progress(State(st): State<AppState>) -> ApiResult<Json<Progress>> {
    let store = st.store.clone();
    let m = blocking(move || store.read().map_err(ApiError::internal)).await?;
    Ok(Json(m.progress()))
}
