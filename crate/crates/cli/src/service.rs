//! JSON-over-HTTP service backing the annotation UI.
//!
//! Only the label store and nothing else is written. Writes go through one
//! mutex, so the store has a single writer; long feature or grid jobs belong to
//! the CLI and never run inside a handler.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Result;
use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use egotime_core::annotation::{
    validate_annotation, AgreementSummary, Axis, LabelStore, RawAnnotation, WindowInventory,
};
use egotime_core::corpus::{build_sampling_plan, sample_frames, Manifest, VideoRecord, VideoSource, Window, WindowKey};
use egotime_core::timeline::read_timeline;

use crate::config::ProjectConfig;
use crate::workspace::{inventory, load_labels, plan_seed, save_labels, scan_corpus, IndexedVideo};

struct ServedVideo {
    video: IndexedVideo,
    source: Option<Box<dyn VideoSource>>,
}

pub struct AppState {
    config: ProjectConfig,
    videos: BTreeMap<String, ServedVideo>,
    inventory: WindowInventory,
    /// Labeling order of pass 1: each ready video's sample plan, videos in id order.
    queue: Vec<WindowKey>,
    labels: Mutex<LabelStore>,
}

impl AppState {
    pub fn load(config: ProjectConfig) -> Result<Self> {
        let indexed = scan_corpus(&config.corpus_root, config.window_s)?;
        let inventory = inventory(&indexed, config.window_s);
        let labels = if config.storage.labels.exists() {
            load_labels(&config.storage.labels, Some(&inventory))?
        } else {
            LabelStore::new()
        };
        let mut queue = Vec::new();
        let mut videos = BTreeMap::new();
        for video in indexed {
            if video.record.is_ready() {
                let seed = plan_seed(config.seeds.sampling, &video.record.video_id);
                let plan = build_sampling_plan(&video.windows, config.sampling.k_cov, config.sampling.k_rand, seed);
                queue.extend(plan.indices().into_iter().map(|i| video.windows[i as usize].key.clone()));
            }
            let source = video.record.is_ready().then(|| video.open()).transpose()?;
            videos.insert(video.record.video_id.clone(), ServedVideo { video, source });
        }
        Ok(Self { config, videos, inventory, queue, labels: Mutex::new(labels) })
    }

    /// Pass 1 walks the plan; later passes re-serve the pass-1 keys in the
    /// same order.
    fn queue_for(&self, store: &LabelStore, pass_id: u32) -> Vec<WindowKey> {
        if pass_id <= 1 {
            return self.queue.clone();
        }
        self.queue.iter().filter(|k| store.get(k, 1).is_some()).cloned().collect()
    }

    fn window(&self, key: &WindowKey) -> Option<(&ServedVideo, &Window)> {
        let served = self.videos.get(key.video_id())?;
        let window = served.video.windows.get(key.index() as usize)?;
        Some((served, window))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, detail: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": error, "detail": detail.into() }) }
    }

    fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", detail)
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", detail)
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_key(raw: &str) -> ApiResult<WindowKey> {
    raw.parse().map_err(|e: egotime_core::Error| ApiError::bad_request(e.to_string()))
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, LabelStore> {
    state.labels.lock().unwrap_or_else(std::sync::PoisonError::into_inner)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/videos", get(list_videos))
        .route("/videos/{id}/windows", get(video_windows))
        .route("/videos/{id}/frames/{index}", get(video_frame))
        .route("/plan/{pass_id}", get(plan))
        .route("/windows/{key}/media", get(window_media))
        .route("/windows/{key}/frames", get(window_frames))
        .route("/annotations", post(post_annotation))
        .route("/progress/{pass_id}", get(progress))
        .route("/agreement", get(agreement))
        .route("/timelines/{video_id}", get(timeline))
        .route("/reports/{run_id}", get(report))
        .route("/vocabulary", get(vocabulary))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Bind and serve until interrupted.
pub async fn serve(config: ProjectConfig, bind: &str) -> Result<()> {
    let state = Arc::new(AppState::load(config)?);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("serving {} windows on http://{}", state.queue.len(), listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Single shared-token check; open when no token is configured.
async fn require_token(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.config.service.token {
        let expected = format!("Bearer {token}");
        let supplied = request.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if supplied != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(request).await
}

#[derive(Serialize)]
struct VideoSummary<'a> {
    #[serde(flatten)]
    record: &'a VideoRecord,
    n_windows: usize,
}

async fn list_videos(State(state): State<Arc<AppState>>) -> Json<Value> {
    let videos: Vec<VideoSummary> = state
        .videos
        .values()
        .map(|v| VideoSummary { record: &v.video.record, n_windows: v.video.windows.len() })
        .collect();
    Json(json!(videos))
}

async fn video_windows(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let served = state.videos.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown video {id}")))?;
    Ok(Json(json!(served.video.windows)))
}

fn pnm_response(bytes: Vec<u8>) -> Response {
    let mime = if bytes.starts_with(b"P6") { "image/x-portable-pixmap" } else { "image/x-portable-graymap" };
    ([(header::CONTENT_TYPE, mime)], bytes).into_response()
}

/// One source frame, as stored on disk for frame directories.
async fn video_frame(
    State(state): State<Arc<AppState>>,
    UrlPath((id, index)): UrlPath<(String, u64)>,
) -> ApiResult<Response> {
    let served = state.videos.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown video {id}")))?;
    let source = served.source.as_ref().ok_or_else(|| ApiError::not_found(format!("video {id} is not ready")))?;
    if index >= source.frame_count() {
        return Err(ApiError::not_found(format!("frame {index} beyond frame count")));
    }
    if served.video.is_frame_directory() {
        let dir = PathBuf::from(&served.video.uri);
        let manifest: Manifest = read_manifest(&dir)?;
        let name = manifest.frame_file_name(index).map_err(ApiError::internal)?;
        let bytes = std::fs::read(dir.join(name)).map_err(|_| ApiError::not_found(format!("frame {index} missing")))?;
        return Ok(pnm_response(bytes));
    }
    let frame = source.read_frame(index).map_err(|e| ApiError::not_found(e.to_string()))?;
    Ok(pnm_response(frame.to_pnm()))
}

fn read_manifest(dir: &Path) -> ApiResult<Manifest> {
    let bytes = std::fs::read(dir.join("manifest.json")).map_err(ApiError::internal)?;
    serde_json::from_slice(&bytes).map_err(ApiError::internal)
}

#[derive(Serialize)]
struct QueueEntry<'a> {
    key: &'a WindowKey,
    video_id: &'a str,
    index: u32,
    start_time_s: f64,
    end_time_s: f64,
    position: usize,
}

async fn plan(State(state): State<Arc<AppState>>, UrlPath(pass_id): UrlPath<u32>) -> ApiResult<Json<Value>> {
    let store = lock(&state);
    let queue = state.queue_for(&store, pass_id);
    let labeled = queue.iter().filter(|k| store.get(k, pass_id).is_some()).count();
    let next = queue.iter().enumerate().find(|(_, k)| store.get(k, pass_id).is_none()).and_then(|(position, key)| {
        let (_, w) = state.window(key)?;
        Some(QueueEntry {
            key,
            video_id: key.video_id(),
            index: key.index(),
            start_time_s: w.start_time_s,
            end_time_s: w.end_time_s,
            position,
        })
    });
    Ok(Json(json!({
        "pass_id": pass_id,
        "total": queue.len(),
        "labeled": labeled,
        "remaining": queue.len() - labeled,
        "next": next,
        "queue": queue,
    })))
}

/// Parse a single `bytes=a-b` range against a file of `len` bytes.
fn byte_range(headers: &HeaderMap, len: u64) -> Option<(u64, u64)> {
    let spec = headers.get(header::RANGE)?.to_str().ok()?.strip_prefix("bytes=")?;
    let (a, b) = spec.split_once('-')?;
    let (start, end) = match (a.trim(), b.trim()) {
        ("", suffix) => {
            let n: u64 = suffix.parse().ok()?;
            (len.saturating_sub(n), len.checked_sub(1)?)
        }
        (a, "") => (a.parse().ok()?, len.checked_sub(1)?),
        (a, b) => (a.parse().ok()?, b.parse::<u64>().ok()?.min(len.checked_sub(1)?)),
    };
    (start <= end && end < len).then_some((start, end))
}

/// Frame directories get a frame strip of the window; container files are
/// served unchanged, honouring byte ranges, with the window bounds in headers.
async fn window_media(
    State(state): State<Arc<AppState>>,
    UrlPath(raw): UrlPath<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let key = parse_key(&raw)?;
    let (served, window) = state.window(&key).ok_or_else(|| ApiError::not_found(format!("unknown window {key}")))?;
    let record = &served.video.record;
    if served.video.is_frame_directory() {
        let total = served.source.as_ref().map_or(0, |s| s.frame_count());
        let first = (window.start_time_s * record.fps - 1e-9).ceil().max(0.0) as u64;
        let frames: Vec<Value> = (first..total)
            .take_while(|&i| (i as f64) / record.fps < window.end_time_s - 1e-9)
            .map(|i| {
                json!({
                    "frame_index": i,
                    "timestamp_s": i as f64 / record.fps,
                    "url": format!("/videos/{}/frames/{i}", record.video_id),
                })
            })
            .collect();
        let body = json!({
            "key": key,
            "kind": "frame_strip",
            "video_id": record.video_id,
            "start_time_s": window.start_time_s,
            "end_time_s": window.end_time_s,
            "fps": record.fps,
            "frames": frames,
        });
        return Ok(Json(body).into_response());
    }
    let bytes = std::fs::read(&served.video.uri).map_err(ApiError::internal)?;
    let len = bytes.len() as u64;
    let mut response = match byte_range(&headers, len) {
        Some((start, end)) => {
            let slice = bytes[start as usize..=end as usize].to_vec();
            let mut r = (StatusCode::PARTIAL_CONTENT, slice).into_response();
            let range = format!("bytes {start}-{end}/{len}");
            r.headers_mut().insert(header::CONTENT_RANGE, HeaderValue::from_str(&range).map_err(ApiError::internal)?);
            r
        }
        None if headers.contains_key(header::RANGE) => {
            let mut r = StatusCode::RANGE_NOT_SATISFIABLE.into_response();
            let range = format!("bytes */{len}");
            r.headers_mut().insert(header::CONTENT_RANGE, HeaderValue::from_str(&range).map_err(ApiError::internal)?);
            return Ok(r);
        }
        None => Response::new(Body::from(bytes)),
    };
    let h = response.headers_mut();
    h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    h.insert("x-window-start", HeaderValue::from_str(&window.start_time_s.to_string()).map_err(ApiError::internal)?);
    h.insert("x-window-end", HeaderValue::from_str(&window.end_time_s.to_string()).map_err(ApiError::internal)?);
    Ok(response)
}

async fn window_frames(State(state): State<Arc<AppState>>, UrlPath(raw): UrlPath<String>) -> ApiResult<Json<Value>> {
    let key = parse_key(&raw)?;
    let (served, window) = state.window(&key).ok_or_else(|| ApiError::not_found(format!("unknown window {key}")))?;
    let source = served.source.as_ref().ok_or_else(|| ApiError::not_found("video is not ready"))?;
    let k = state.config.frames_per_window;
    let sampled = sample_frames(window, k, source.as_ref()).map_err(ApiError::internal)?;
    let frames: Vec<Value> = sampled
        .iter()
        .map(|s| {
            let r = &s.frame_ref;
            json!({
                "slot": r.frame_slot,
                "timestamp_s": r.timestamp_s,
                "decode_ok": r.decode_ok,
                "frame_index": r.frame_index,
                "url": r.frame_index.map(|i| format!("/videos/{}/frames/{i}", key.video_id())),
            })
        })
        .collect();
    Ok(Json(json!({ "key": key, "k": k, "frames": frames })))
}

#[derive(Deserialize)]
struct AnnotationRequest {
    #[serde(flatten)]
    annotation: RawAnnotation,
    /// Revision the client last saw; 0 when creating.
    #[serde(default)]
    base_revision: u64,
}

/// Validate, then write under the store lock. The new store is persisted
/// before it replaces the old one, so any failure leaves the store unchanged.
async fn post_annotation(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let request: AnnotationRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed annotation body: {e}")))?;
    let mut raw = request.annotation;
    if raw.created_at.trim().is_empty() {
        raw.created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    }
    let annotation = validate_annotation(&raw, &state.inventory).map_err(|issues| ApiError {
        status: StatusCode::BAD_REQUEST,
        body: json!({ "error": "invalid_annotation", "issues": issues }),
    })?;

    let mut store = lock(&state);
    let mut next = store.clone();
    let revision = next.upsert(annotation.clone(), request.base_revision).map_err(|conflict| ApiError {
        status: StatusCode::CONFLICT,
        body: json!({ "error": "stale_revision", "conflict": conflict }),
    })?;
    save_labels(&state.config.storage.labels, &next).map_err(|e| ApiError::internal(format!("{e:#}")))?;
    *store = next;
    let stored = store.get(&annotation.key, annotation.pass_id).cloned();
    Ok((StatusCode::CREATED, Json(json!({ "revision": revision, "annotation": stored }))).into_response())
}

async fn progress(State(state): State<Arc<AppState>>, UrlPath(pass_id): UrlPath<u32>) -> Json<Value> {
    let store = lock(&state);
    let queue = state.queue_for(&store, pass_id);
    let mut per_video: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for key in &queue {
        let entry = per_video.entry(key.video_id()).or_default();
        entry.0 += 1;
        if store.get(key, pass_id).is_some() {
            entry.1 += 1;
        }
    }
    let labeled: usize = per_video.values().map(|(_, l)| l).sum();
    let videos: Vec<Value> = per_video
        .iter()
        .map(|(id, (queued, done))| json!({ "video_id": id, "queued": queued, "labeled": done }))
        .collect();
    Json(json!({
        "pass_id": pass_id,
        "queue_total": queue.len(),
        "labeled": labeled,
        "remaining": queue.len() - labeled,
        "labeled_outside_queue": store.pass(pass_id).len() - labeled,
        "videos": videos,
    }))
}

#[derive(Deserialize)]
struct AgreementQuery {
    p1: u32,
    p2: u32,
}

async fn agreement(State(state): State<Arc<AppState>>, Query(q): Query<AgreementQuery>) -> ApiResult<Json<Value>> {
    let store = lock(&state);
    let summary = AgreementSummary::compute(&store, q.p1, q.p2).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(json!(summary)))
}

/// Reject ids that could step outside the storage directory.
fn safe_name(name: &str) -> ApiResult<&str> {
    let ok = !name.is_empty() && !name.starts_with('.') && !name.contains(['/', '\\']);
    if ok {
        Ok(name)
    } else {
        Err(ApiError::bad_request(format!("invalid identifier `{name}`")))
    }
}

async fn timeline(State(state): State<Arc<AppState>>, UrlPath(video_id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let path = state.config.storage.timelines.join(format!("{}.jsonl", safe_name(&video_id)?));
    let file = std::fs::File::open(&path).map_err(|_| ApiError::not_found(format!("no timeline for {video_id}")))?;
    let (header, records) = read_timeline(std::io::BufReader::new(file)).map_err(ApiError::internal)?;
    Ok(Json(json!({ "header": header, "records": records })))
}

async fn report(State(state): State<Arc<AppState>>, UrlPath(run_id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let name = format!("{}.json", safe_name(&run_id)?);
    let root = &state.config.storage.reports;
    let found = [root.join("reports").join(&name), root.join(&name)].into_iter().find(|p| p.is_file());
    let path = found.ok_or_else(|| ApiError::not_found(format!("no report for run {run_id}")))?;
    let bytes = std::fs::read(&path).map_err(ApiError::internal)?;
    let value: Value = serde_json::from_slice(&bytes).map_err(ApiError::internal)?;
    Ok(Json(value))
}

async fn vocabulary(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "context": Axis::Context.vocabulary(),
        "activity": Axis::Activity.vocabulary(),
        "low_evidence": { "context": Axis::Context.low_evidence(), "activity": Axis::Activity.low_evidence() },
        "window_s": state.config.window_s,
        "frames_per_window": state.config.frames_per_window,
    }))
}
