use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use gsculpt_core::image::ColorImage;
use gsculpt_core::perception::SegmenterHandle;
use gsculpt_core::pipeline::{segment, SegmentConfig};
use gsculpt_core::render::{render, render_selection_mask, RenderOptions};
use gsculpt_core::scene::{
    load_cameras, load_scene_ply, mask_to_png_bytes, Camera, Click, GaussianScene, Polarity, Selection, ViewSet,
};
use gsculpt_core::toolbox::{apply_op, OpDescriptor};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::jobs::JobHandle;
use crate::session::{Session, SessionConfig, SessionSlot, Version};
use crate::AppState;

/// Overlay tint and its share of the pixel color.
const OVERLAY_TINT: [f64; 3] = [1.0, 0.3, 0.1];
const OVERLAY_ALPHA: f64 = 0.4;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/views", get(list_views))
        .route("/session/{id}/render", get(render_view))
        .route("/session/{id}/click", post(add_click))
        .route("/session/{id}/clicks", delete(clear_clicks))
        .route("/session/{id}/segment", post(start_segment))
        .route("/session/{id}/selection", get(get_selection))
        .route("/session/{id}/mask", get(get_mask))
        .route("/session/{id}/op", post(apply_operation))
        .route("/session/{id}/undo", post(undo))
        .route("/job/{id}", get(get_job))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(state)
}

/// JSON body whose every rejection is a 422. An empty body reads as `{}`.
struct Body<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::unprocessable(e.body_text()))?;
        let text: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { &bytes };
        serde_json::from_slice(text)
            .map(Body)
            .map_err(|e| ApiError::unprocessable(format!("invalid body: {e}")))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    scene: String,
    cameras: String,
    #[serde(default)]
    config: SessionConfig,
}

async fn create_session(State(app): State<AppState>, Body(req): Body<CreateSession>) -> Result<Json<Value>, ApiError> {
    let (scene, views) = blocking(move || -> Result<(GaussianScene, ViewSet), ApiError> {
        Ok((load_scene_ply(&req.scene)?, load_cameras(&req.cameras)?))
    })
    .await??;
    if scene.is_empty() {
        return Err(ApiError::unprocessable("scene is empty"));
    }
    if req.config.segmenter == SegmenterHandle::Oracle && scene.labels().is_none() {
        return Err(ApiError::unprocessable("the oracle segmenter needs a labeled scene"));
    }
    let session = Session::new(scene, views, req.config);
    let mut body = session.summary();
    body["views"] = json!(session.views.len());
    let id = app.insert_session(SessionSlot::new(session));
    body["session_id"] = json!(id);
    tracing::info!(session = %id, "session created");
    Ok(Json(body))
}

async fn list_views(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let slot = app.session(&id)?;
    let views = slot.read().views.clone();
    serde_json::from_str(&views.to_json())
        .map(Json)
        .map_err(|e| ApiError::internal(e.to_string()))
}

struct Snapshot {
    scene: Arc<GaussianScene>,
    selection: Option<Selection>,
    views: Arc<ViewSet>,
    config: SessionConfig,
}

fn snapshot(session: &Session) -> Snapshot {
    let top = session.current();
    Snapshot {
        scene: top.scene.clone(),
        selection: top.selection.clone(),
        views: session.views.clone(),
        config: session.config.clone(),
    }
}

fn camera(views: &ViewSet, query: &HashMap<String, String>) -> Result<Camera, ApiError> {
    let raw = query.get("view").ok_or_else(|| ApiError::unprocessable("missing query parameter `view`"))?;
    let id: u32 = raw
        .parse()
        .map_err(|_| ApiError::unprocessable(format!("view `{raw}` is not a view id")))?;
    views.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no view {id}")))
}

async fn render_view(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let snap = snapshot(&app.session(&id)?.read());
    let cam = camera(&snap.views, &query)?;
    let overlay = match query.get("overlay").map(String::as_str) {
        None | Some("none") => false,
        Some("mask") => true,
        Some(other) => return Err(ApiError::unprocessable(format!("overlay `{other}` is not `mask` or `none`"))),
    };
    let bytes = blocking(move || -> Result<Vec<u8>, ApiError> {
        let options = RenderOptions::with_background(snap.config.segment.background);
        let mut color = render(&snap.scene, &cam, &options).color;
        if let (true, Some(sel)) = (overlay, &snap.selection) {
            let mask = render_selection_mask(&snap.scene, sel, &cam, snap.config.segment.mask_threshold)
                .map_err(|e| ApiError::internal(e.to_string()))?;
            tint(&mut color, &mask.bits);
        }
        Ok(color.to_png_bytes())
    })
    .await??;
    Ok(png(bytes))
}

fn tint(color: &mut ColorImage, bits: &[bool]) {
    for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
        let (x, y) = (i as u32 % color.width, i as u32 / color.width);
        let c = color.pixel(x, y);
        let mixed = std::array::from_fn(|k| (1.0 - OVERLAY_ALPHA) * c[k] + OVERLAY_ALPHA * OVERLAY_TINT[k]);
        color.set_pixel(x, y, mixed);
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClickBody {
    view_id: u32,
    x: f64,
    y: f64,
    polarity: Polarity,
}

async fn add_click(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<ClickBody>,
) -> Result<Json<Value>, ApiError> {
    let slot = app.session(&id)?;
    let _writer = slot.writer.lock().await;
    let mut session = slot.write();
    let click = Click::user(body.view_id, body.x, body.y, body.polarity);
    let cam = session
        .views
        .get(click.view_id)
        .ok_or_else(|| ApiError::unprocessable(format!("no view {}", click.view_id)))?;
    click.validate(cam)?;
    session.clicks.push(click);
    Ok(Json(json!({ "clicks": session.clicks })))
}

async fn clear_clicks(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let slot = app.session(&id)?;
    let _writer = slot.writer.lock().await;
    slot.write().clicks.clear();
    Ok(Json(json!({ "clicks": [] })))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SegmentBody {
    #[serde(default)]
    config: Option<SessionConfig>,
}

fn accepted(job: &JobHandle) -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "job_id": job.id() }))).into_response()
}

async fn start_segment(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<SegmentBody>,
) -> Result<Response, ApiError> {
    let slot = app.session(&id)?;
    if slot.read().clicks.is_empty() {
        return Err(ApiError::conflict("no clicks given"));
    }
    let job = app.inner.jobs.create("segment", &id);
    let task = job.clone();
    let workers = app.inner.workers.clone();
    tokio::spawn(async move {
        let _writer = slot.writer.clone().lock_owned().await;
        let Ok(_permit) = workers.acquire_owned().await else { return };
        task.start();
        let (snap, clicks) = {
            let mut session = slot.write();
            if let Some(config) = body.config {
                session.config = config;
            }
            (snapshot(&session), session.clicks.clone())
        };
        let result = run_segment(snap, clicks).await;
        let result = result.and_then(|(selection, report)| {
            let mut session = slot.write();
            session.set_selection(selection)?;
            session.report = Some(report.clone());
            let mut out = session.summary();
            out["report"] = serde_json::to_value(&report).unwrap_or(Value::Null);
            Ok(out)
        });
        tracing::info!(session = %id, ok = result.is_ok(), "segment job finished");
        task.finish(result);
    });
    Ok(accepted(&job))
}

async fn run_segment(
    snap: Snapshot,
    clicks: Vec<Click>,
) -> Result<(Selection, gsculpt_core::pipeline::SegmentReport), ApiError> {
    blocking(move || {
        let segmenter = snap.config.segmenter.build(&snap.scene)?;
        let features = snap.config.features.build()?;
        let config: SegmentConfig = snap.config.segment;
        let out = segment(&snap.scene, &snap.views, &clicks, &segmenter, &features, &config)?;
        Ok((out.selection, out.report))
    })
    .await?
}

async fn get_selection(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let slot = app.session(&id)?;
    let session = slot.read();
    let mut body = session.summary();
    body["selection"] = json!(session.current().selection);
    body["clicks"] = json!(session.clicks);
    body["report"] = json!(session.report);
    body["config"] = json!(session.config);
    Ok(Json(body))
}

async fn get_mask(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let snap = snapshot(&app.session(&id)?.read());
    let cam = camera(&snap.views, &query)?;
    let selection = snap.selection.ok_or_else(|| ApiError::conflict("session has no selection"))?;
    let threshold = snap.config.segment.mask_threshold;
    let bytes = blocking(move || -> Result<Vec<u8>, ApiError> {
        let mask = render_selection_mask(&snap.scene, &selection, &cam, threshold)
            .map_err(|e| ApiError::conflict(e.to_string()))?;
        Ok(mask_to_png_bytes(&mask))
    })
    .await??;
    Ok(png(bytes))
}

async fn apply_operation(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Body(op): Body<OpDescriptor>,
) -> Result<Response, ApiError> {
    let slot = app.session(&id)?;
    if let OpDescriptor::Edit { steps, .. } = op {
        let job = app.inner.jobs.create("edit", &id);
        let task = job.clone();
        let workers = app.inner.workers.clone();
        tokio::spawn(async move {
            let _writer = slot.writer.clone().lock_owned().await;
            let Ok(_permit) = workers.acquire_owned().await else { return };
            task.start();
            let progress = task.clone();
            let result = commit_op(&slot, op, move |step, loss| progress.step(step, steps, loss)).await;
            tracing::info!(session = %id, ok = result.is_ok(), "edit job finished");
            task.finish(result);
        });
        return Ok(accepted(&job));
    }
    let _writer = slot.writer.lock().await;
    Ok(Json(commit_op(&slot, op, |_, _| {}).await?).into_response())
}

/// Applies `op` to the top version and pushes the result. The caller holds the writer lock.
async fn commit_op(
    slot: &Arc<SessionSlot>,
    op: OpDescriptor,
    mut progress: impl FnMut(usize, f64) + Send + 'static,
) -> Result<Value, ApiError> {
    let snap = snapshot(&slot.read());
    let name = op.name();
    let outcome = blocking(move || {
        apply_op(&snap.scene, snap.selection.as_ref(), &snap.views, &op, &mut progress)
    })
    .await??;
    let mut session = slot.write();
    session.push(Version {
        scene: Arc::new(outcome.scene),
        selection: outcome.selection,
    });
    let mut body = session.summary();
    body["op"] = json!(name);
    if let Some(trace) = outcome.loss_trace {
        body["loss_trace"] = json!(trace);
    }
    Ok(body)
}

async fn undo(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let slot = app.session(&id)?;
    let _writer = slot.writer.lock().await;
    let mut session = slot.write();
    if !session.undo() {
        return Err(ApiError::conflict("nothing to undo"));
    }
    Ok(Json(session.summary()))
}

async fn get_job(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let job = app.inner.jobs.get(&id).ok_or_else(|| ApiError::not_found(format!("no job `{id}`")))?;
    serde_json::to_value(job.snapshot())
        .map(Json)
        .map_err(|e| ApiError::internal(e.to_string()))
}
