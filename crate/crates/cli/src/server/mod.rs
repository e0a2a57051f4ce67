//! Scene-composition HTTP service.
//!
//! Sessions hold an editable draft in memory; requests for one session run
//! one at a time. Mutating requests may carry an `Idempotency-Key` header
//! and an `expected_version`; a stale version gets 409.

pub mod draft;
pub mod jobs;

use crate::cli::ServeArgs;
use crate::policy_server::run_http;
use anyhow::Result;
use axum::body::{to_bytes, Body};
use axum::extract::{Path as UrlPath, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use draft::{resized, Draft, Library, Session};
use jobs::{JobQueue, JobRequest, JobState};
use serde::Deserialize;
use serde_json::{json, Value};
use simeval_core::scene::{save_descriptor, CameraSpec, PlacementSpec, PoseSpec, Randomization, Rubric, WristSpec};
use simeval_core::splat::render;
use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

pub struct AppState {
    pub library: Library,
    sessions: Mutex<BTreeMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    next_session: Mutex<u64>,
    idempotency: Mutex<HashMap<String, (StatusCode, Option<HeaderValue>, axum::body::Bytes)>>,
    thumbnails: Mutex<HashMap<String, Vec<u8>>>,
    jobs: JobQueue,
    sessions_dir: Option<PathBuf>,
}

pub type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": { "kind": kind, "message": message.into() } }),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body["error"][key] = value;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("{e:#}"))
    }
}

type ApiResult<T> = Result<T, ApiError>;

impl AppState {
    pub fn new(library: Library, sessions_dir: Option<PathBuf>) -> Self {
        Self {
            library,
            sessions: Mutex::default(),
            next_session: Mutex::new(0),
            idempotency: Mutex::default(),
            thumbnails: Mutex::default(),
            jobs: JobQueue::start(),
            sessions_dir,
        }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`")))
    }

    fn autosave(&self, s: &Session) {
        let Some(dir) = &self.sessions_dir else { return };
        let write = || -> Result<()> {
            std::fs::create_dir_all(dir)?;
            save_descriptor(&dir.join(format!("{}.psd", s.id)), &s.draft.to_descriptor(&self.library, false)?)?;
            Ok(())
        };
        if let Err(e) = write() {
            crate::progress::error("autosave", &format!("{}: {e:#}", s.id));
        }
    }

    /// Writes every session draft; called on shutdown.
    pub fn flush(&self) {
        let sessions: Vec<_> = self.sessions.lock().expect("session table").values().cloned().collect();
        for s in sessions {
            self.autosave(&s.blocking_lock());
        }
    }

    fn view(&self, s: &Session) -> Value {
        json!({
            "session": s.id,
            "version": s.version,
            "dirty": s.dirty,
            "undo_depth": s.undo.len(),
            "draft": s.draft,
            "violations": s.draft.violations(&self.library),
        })
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/assets", get(assets))
        .route("/assets/:id/thumbnail", get(thumbnail))
        .route("/session", post(new_session))
        .route("/scene/:session", get(scene))
        .route("/scene/:session/placements", get(placements).post(edit_placements))
        .route("/scene/:session/camera", post(camera))
        .route("/scene/:session/rubric", post(rubric))
        .route("/scene/:session/undo", post(undo))
        .route("/scene/:session/save", post(save))
        .route("/render/preview", post(preview))
        .route("/eval/start", post(eval_start))
        .route("/eval/:job/status", get(eval_status))
        .route("/metrics/:job", get(eval_metrics))
        .route("/schema", get(schema))
        .layer(middleware::from_fn_with_state(state.clone(), idempotent))
        .with_state(state)
}

/// Replays the stored response for a repeated `Idempotency-Key` on POST.
async fn idempotent(State(st): State<Shared>, req: Request, next: Next) -> Response {
    let key = match (req.method(), req.headers().get("idempotency-key")) {
        (&Method::POST, Some(k)) => format!("{} {}", req.uri().path(), String::from_utf8_lossy(k.as_bytes())),
        _ => return next.run(req).await,
    };
    if let Some((status, ctype, body)) = st.idempotency.lock().expect("idempotency cache").get(&key).cloned() {
        return replay(status, ctype, body);
    }
    let resp = next.run(req).await;
    let (parts, body) = resp.into_parts();
    let Ok(bytes) = to_bytes(body, usize::MAX).await else {
        return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "response body").into_response();
    };
    let ctype = parts.headers.get(header::CONTENT_TYPE).cloned();
    // server faults are worth retrying, so they are not remembered
    if !parts.status.is_server_error() {
        st.idempotency
            .lock()
            .expect("idempotency cache")
            .insert(key, (parts.status, ctype, bytes.clone()));
    }
    Response::from_parts(parts, Body::from(bytes))
}

fn replay(status: StatusCode, ctype: Option<HeaderValue>, body: axum::body::Bytes) -> Response {
    let mut r = Response::new(Body::from(body));
    *r.status_mut() = status;
    if let Some(c) = ctype {
        r.headers_mut().insert(header::CONTENT_TYPE, c);
    }
    r.headers_mut().insert("idempotent-replay", HeaderValue::from_static("true"));
    r
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn assets(State(st): State<Shared>) -> Json<Value> {
    let list: Vec<Value> = st
        .library
        .assets
        .iter()
        .map(|(id, (_, a))| {
            let bb = a.bounds();
            json!({
                "id": id,
                "bounds": { "min": [bb.min.x, bb.min.y, bb.min.z], "max": [bb.max.x, bb.max.y, bb.max.z] },
                "mass": a.mass,
                "splats": a.splats.len(),
                "thumbnail": format!("/assets/{id}/thumbnail"),
            })
        })
        .collect();
    Json(json!({ "assets": list }))
}

async fn thumbnail(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    if let Some(b) = st.thumbnails.lock().expect("thumbnail cache").get(&id) {
        return Ok(png(b.clone()));
    }
    let st2 = st.clone();
    let id2 = id.clone();
    let bytes = tokio::task::spawn_blocking(move || st2.library.thumbnail(&id2, 96))
        .await
        .map_err(|e| anyhow::anyhow!(e))?
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_asset", format!("no asset `{id}`")))?;
    st.thumbnails.lock().expect("thumbnail cache").insert(id, bytes.clone());
    Ok(png(bytes))
}

async fn new_session(State(st): State<Shared>) -> Json<Value> {
    let id = {
        let mut n = st.next_session.lock().expect("session counter");
        *n += 1;
        format!("s{:04}", *n)
    };
    let s = Session::new(id.clone(), Draft::from_template(&st.library.template));
    let view = st.view(&s);
    st.autosave(&s);
    st.sessions.lock().expect("session table").insert(id, Arc::new(tokio::sync::Mutex::new(s)));
    Json(view)
}

async fn scene(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let s = st.session(&id)?;
    let s = s.lock().await;
    Ok(Json(st.view(&s)))
}

async fn placements(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let s = st.session(&id)?;
    let s = s.lock().await;
    Ok(Json(json!({ "session": s.id, "version": s.version, "placements": s.draft.placements })))
}

fn check_version(s: &Session, expected: Option<u64>) -> ApiResult<()> {
    match expected {
        Some(v) if v != s.version => Err(ApiError::new(
            StatusCode::CONFLICT,
            "version_conflict",
            format!("draft is at version {}, request expected {v}", s.version),
        )
        .with("version", json!(s.version))),
        _ => Ok(()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PlacementOp {
    /// Adds the instance, or replaces it in place.
    Upsert {
        instance: String,
        asset: String,
        pose: PoseSpec,
        #[serde(default)]
        randomization: Randomization,
    },
    Remove { instance: String },
    /// Replaces the whole list.
    Set { placements: Vec<PlacementSpec> },
}

#[derive(Debug, Deserialize)]
pub struct PlacementEdit {
    #[serde(flatten)]
    op: PlacementOp,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn edit_placements(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(edit): Json<PlacementEdit>,
) -> ApiResult<Json<Value>> {
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    check_version(&s, edit.expected_version)?;
    let lib = &st.library;
    let unknown = |asset: &str| {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_asset", format!("no asset `{asset}` in the library"))
            .with("asset", json!(asset))
    };
    s.mutate(|d| match edit.op {
        PlacementOp::Upsert {
            instance,
            asset,
            pose,
            randomization,
        } => {
            if !lib.assets.contains_key(&asset) {
                return Err(unknown(&asset));
            }
            let spec = PlacementSpec {
                instance,
                asset,
                pose,
                randomization,
            };
            match d.placements.iter_mut().find(|p| p.instance == spec.instance) {
                Some(p) => *p = spec,
                None => d.placements.push(spec),
            }
            Ok(())
        }
        PlacementOp::Remove { instance } => {
            let before = d.placements.len();
            d.placements.retain(|p| p.instance != instance);
            if d.placements.len() == before {
                return Err(ApiError::new(
                    StatusCode::NOT_FOUND,
                    "unknown_instance",
                    format!("no placement `{instance}`"),
                ));
            }
            Ok(())
        }
        PlacementOp::Set { placements } => {
            if let Some(p) = placements.iter().find(|p| !lib.assets.contains_key(&p.asset)) {
                return Err(unknown(&p.asset));
            }
            d.placements = placements;
            Ok(())
        }
    })?;
    st.autosave(&s);
    Ok(Json(st.view(&s)))
}

#[derive(Debug, Deserialize)]
pub struct CameraEdit {
    #[serde(flatten)]
    camera: CameraSpec,
    /// Binds the camera to this link as the wrist camera; `pose` is then link-local.
    #[serde(default)]
    wrist_link: Option<String>,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn camera(State(st): State<Shared>, UrlPath(id): UrlPath<String>, Json(edit): Json<CameraEdit>) -> ApiResult<Json<Value>> {
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    check_version(&s, edit.expected_version)?;
    if let Err(e) = edit.camera.camera().validate() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_camera", e.to_string()));
    }
    if let Some(link) = &edit.wrist_link {
        if !st.library.has_link(link) {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_link", format!("robot has no link `{link}`")));
        }
    }
    s.mutate::<ApiError>(|d| {
        let name = edit.camera.name.clone();
        match edit.wrist_link {
            Some(link) => {
                d.cameras.retain(|c| c.name != name);
                d.wrist = Some(WristSpec { link, camera: edit.camera });
            }
            None => {
                if d.wrist.as_ref().is_some_and(|w| w.camera.name == name) {
                    d.wrist = None;
                }
                match d.cameras.iter_mut().find(|c| c.name == name) {
                    Some(c) => *c = edit.camera,
                    None => d.cameras.push(edit.camera),
                }
            }
        }
        Ok(())
    })?;
    st.autosave(&s);
    Ok(Json(st.view(&s)))
}

#[derive(Debug, Deserialize)]
pub struct RubricEdit {
    rubric: Rubric,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn rubric(State(st): State<Shared>, UrlPath(id): UrlPath<String>, Json(edit): Json<RubricEdit>) -> ApiResult<Json<Value>> {
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    check_version(&s, edit.expected_version)?;
    let problems: Vec<Value> = edit
        .rubric
        .steps
        .iter()
        .enumerate()
        .filter_map(|(k, step)| {
            let errs = step.predicate.parameter_errors();
            (!errs.is_empty()).then(|| json!({ "step": k, "errors": errs }))
        })
        .collect();
    if !problems.is_empty() {
        return Err(
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_rubric", "rubric parameters out of range")
                .with("steps", json!(problems)),
        );
    }
    s.mutate::<ApiError>(|d| {
        d.rubric = edit.rubric;
        Ok(())
    })?;
    st.autosave(&s);
    Ok(Json(st.view(&s)))
}

async fn undo(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    if !s.undo() {
        return Err(ApiError::new(StatusCode::CONFLICT, "nothing_to_undo", "undo stack is empty"));
    }
    st.autosave(&s);
    Ok(Json(st.view(&s)))
}

#[derive(Debug, Deserialize)]
pub struct SaveRequest {
    path: PathBuf,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn save(State(st): State<Shared>, UrlPath(id): UrlPath<String>, Json(req): Json<SaveRequest>) -> ApiResult<Json<Value>> {
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    check_version(&s, req.expected_version)?;
    let violations = s.draft.violations(&st.library);
    if !violations.is_empty() {
        return Err(
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scene", "draft does not compose")
                .with("violations", json!(violations)),
        );
    }
    let desc = s.draft.to_descriptor(&st.library, true)?;
    save_descriptor(&req.path, &desc).map_err(anyhow::Error::from)?;
    s.dirty = false;
    Ok(Json(json!({ "session": s.id, "version": s.version, "path": req.path })))
}

#[derive(Debug, Deserialize)]
pub struct PreviewRequest {
    session: String,
    camera: String,
    /// `[width, height]`; the camera's own size when absent.
    #[serde(default)]
    resolution: Option<[u32; 2]>,
}

async fn preview(State(st): State<Shared>, Json(req): Json<PreviewRequest>) -> ApiResult<Response> {
    let draft = st.session(&req.session)?.lock().await.draft.clone();
    let mut cam = draft.camera(&st.library, &req.camera).ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_camera", format!("draft has no camera `{}`", req.camera))
    })?;
    if let Some([w, h]) = req.resolution {
        if w == 0 || h == 0 || w > 4096 || h > 4096 {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_resolution", "resolution must be 1..=4096"));
        }
        cam = resized(&cam, w, h);
    }
    let st2 = st.clone();
    let bytes = tokio::task::spawn_blocking(move || -> Result<Vec<u8>> {
        let flat = draft.flatten(&st2.library)?;
        Ok(render(&flat, &cam)?.to_png())
    })
    .await
    .map_err(|e| anyhow::anyhow!(e))??;
    Ok(png(bytes))
}

async fn eval_start(State(st): State<Shared>, Json(req): Json<JobRequest>) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = st
        .jobs
        .submit(req)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_job", format!("{e:#}")))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job": id }))))
}

fn job(st: &AppState, id: &str) -> ApiResult<jobs::JobStatus> {
    st.jobs
        .status(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_job", format!("no job `{id}`")))
}

async fn eval_status(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    Ok(Json(serde_json::to_value(job(&st, &id)?).map_err(anyhow::Error::from)?))
}

async fn eval_metrics(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let j = job(&st, &id)?;
    match (j.state, j.result) {
        (JobState::Done, Some(v)) => Ok(Json(v)),
        (JobState::Failed, _) => Err(ApiError::new(StatusCode::CONFLICT, "job_failed", j.error.unwrap_or_default())),
        _ => Err(ApiError::new(StatusCode::CONFLICT, "job_pending", format!("job `{id}` has not finished"))),
    }
}

async fn schema() -> Json<Value> {
    let subject = json!({
        "oneOf": [
            { "type": "string", "description": "instance id" },
            { "type": "object", "properties": { "ids": { "type": "array", "items": { "type": "string" }, "minItems": 1 }, "min_count": { "type": "integer", "minimum": 1 } } }
        ]
    });
    let positive = json!({ "type": "number", "exclusiveMinimum": 0 });
    let vec3 = json!({ "type": "array", "items": { "type": "number" }, "minItems": 3, "maxItems": 3 });
    Json(json!({
        "version": 1,
        "pose": { "translation": vec3, "rotation": { "type": "array", "description": "quaternion [w, x, y, z]", "minItems": 4, "maxItems": 4 } },
        "predicates": {
            "inside_region": { "subject": subject, "min": vec3, "max": vec3, "constraints": ["min < max on every axis"] },
            "on_top_of": { "subject": subject, "support": { "type": "string" }, "overlap": { "type": "number", "exclusiveMinimum": 0, "maximum": 1, "default": 0.5 }, "gap": { "type": "number", "exclusiveMinimum": 0, "default": 0.02 } },
            "near": { "subject": subject, "other": { "type": "string" }, "distance": positive },
            "lifted": { "subject": subject, "height": positive },
            "reached": { "subject": subject, "distance": positive },
            "grasped": { "subject": subject },
        },
        "placement_ops": ["upsert", "remove", "set"],
        "endpoints": [
            "GET /assets", "GET /assets/{id}/thumbnail", "POST /session", "GET /scene/{session}",
            "GET /scene/{session}/placements", "POST /scene/{session}/placements", "POST /scene/{session}/camera",
            "POST /scene/{session}/rubric", "POST /scene/{session}/undo", "POST /scene/{session}/save",
            "POST /render/preview", "POST /eval/start", "GET /eval/{job}/status", "GET /metrics/{job}", "GET /schema"
        ],
        "headers": { "Idempotency-Key": "optional on POST; a repeated key returns the first response" },
        "undo_depth": draft::UNDO_DEPTH,
    }))
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let library = Library::load(&a.template, a.assets.as_deref())?;
    crate::progress::emit("serve.library", json!({ "assets": library.assets.keys().collect::<Vec<_>>() }));
    let state = Arc::new(AppState::new(library, a.sessions_dir.clone()));
    let app = router(state.clone());
    run_http(&a.host, a.port, app, "serve", move || state.flush())
}
