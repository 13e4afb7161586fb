use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use sakugaflow_core::{
    Canvas, Digest, Engine, EngineError, GenerationParams, Job, JobId, MaskRegion, NodeId, Project,
    ProjectId, RegenerateOptions, VersionNode,
};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::stream::{project_events, sse_events};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs an engine call off the async runtime; the engine blocks on disk I/O.
async fn run<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
pub struct CreateProject {
    pub theme: String,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProjectView {
    pub project: Project,
    pub nodes: Vec<VersionNode>,
    pub jobs: Vec<Job>,
}

/// Response of the generate family. `job` is absent when generation was
/// not requested.
#[derive(Debug, Serialize, Deserialize)]
pub struct NodeJob {
    pub node: VersionNode,
    pub job: Option<Job>,
}

#[derive(Debug, Default, Deserialize)]
pub struct AdvanceBody {
    #[serde(default)]
    pub prompt_delta: String,
    pub seed: Option<u64>,
    #[serde(default = "default_true")]
    pub generate: bool,
}

#[derive(Debug, Default, Deserialize)]
pub struct RegenerateBody {
    pub prompt: Option<String>,
    pub negative_prompt: Option<String>,
    pub seed: Option<u64>,
    pub params: Option<GenerationParams>,
    #[serde(default = "default_true")]
    pub generate: bool,
}

#[derive(Debug, Deserialize)]
pub struct InpaintBody {
    /// Base64 grayscale PNG at canvas size; pixels >= 128 are selected.
    pub mask_b64: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default = "default_true")]
    pub generate: bool,
}

#[derive(Debug, Deserialize)]
pub struct ActivateBody {
    pub node_id: NodeId,
}

#[derive(Debug, Deserialize)]
pub struct LabelBody {
    pub label: String,
}

#[derive(Debug, Deserialize)]
pub struct CompareQuery {
    pub a: NodeId,
    pub b: NodeId,
}

#[derive(Debug, Deserialize)]
pub struct AskBody {
    pub node_id: Option<NodeId>,
    pub project_id: Option<ProjectId>,
    pub question: String,
}

#[derive(Debug, Default, Deserialize)]
pub struct EventsQuery {
    pub after: Option<u64>,
    #[serde(default = "default_true")]
    pub follow: bool,
}

pub async fn health(State(s): State<AppState>) -> Json<serde_json::Value> {
    let cache = s.engine.cache().map(|c| {
        serde_json::json!({ "entries": c.len(), "hits": c.hits(), "misses": c.misses() })
    });
    Json(serde_json::json!({
        "status": "ok",
        "backend": s.engine.backend().descriptor(),
        "cache": cache,
    }))
}

pub async fn create_project(
    State(s): State<AppState>,
    body: Result<Json<CreateProject>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Project>)> {
    let Json(body) = body?;
    let project = run(&s, move |e| {
        let canvas = match (body.width, body.height) {
            (None, None) => None,
            (w, h) => Some(Canvas::new(
                w.unwrap_or(Canvas::DEFAULT.width),
                h.unwrap_or(Canvas::DEFAULT.height),
            )?),
        };
        e.create_project(&body.theme, canvas, body.seed)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(project)))
}

pub async fn list_projects(State(s): State<AppState>) -> ApiResult<Json<Vec<Project>>> {
    Ok(Json(run(&s, |e| Ok(e.list_projects())).await?))
}

pub async fn get_project(
    State(s): State<AppState>,
    Path(id): Path<ProjectId>,
) -> ApiResult<Json<ProjectView>> {
    let state = run(&s, move |e| e.state(&id)).await?;
    Ok(Json(ProjectView {
        project: state.project,
        nodes: state.tree.iter().cloned().collect(),
        jobs: state.jobs.into_values().collect(),
    }))
}

pub async fn get_tree(State(s): State<AppState>, Path(id): Path<ProjectId>) -> ApiResult<Response> {
    let doc = run(&s, move |e| e.export_tree(&id)).await?;
    Ok(Json(doc).into_response())
}

pub async fn get_exchanges(State(s): State<AppState>, Path(id): Path<ProjectId>) -> ApiResult<Response> {
    let exchanges = run(&s, move |e| e.exchanges(&id)).await?;
    Ok(Json(exchanges).into_response())
}

pub async fn get_node(State(s): State<AppState>, Path(id): Path<NodeId>) -> ApiResult<Json<VersionNode>> {
    Ok(Json(run(&s, move |e| e.node(&id)).await?))
}

pub async fn get_job(State(s): State<AppState>, Path(id): Path<JobId>) -> ApiResult<Json<Job>> {
    Ok(Json(run(&s, move |e| e.job(&id)).await?))
}

/// Queues generation for `node` and reports the node as it stands afterwards.
fn queue(e: &Engine, node: VersionNode, generate: bool) -> Result<(StatusCode, NodeJob), EngineError> {
    if !generate {
        return Ok((StatusCode::CREATED, NodeJob { node, job: None }));
    }
    let job = e.generate(&node.id)?;
    let node = e.node(&node.id)?;
    Ok((StatusCode::ACCEPTED, NodeJob { node, job: Some(job) }))
}

pub async fn generate(State(s): State<AppState>, Path(id): Path<NodeId>) -> ApiResult<(StatusCode, Json<NodeJob>)> {
    let (status, body) = run(&s, move |e| {
        let node = e.node(&id)?;
        queue(e, node, true)
    })
    .await?;
    Ok((status, Json(body)))
}

pub async fn advance(
    State(s): State<AppState>,
    Path(id): Path<NodeId>,
    body: Option<Json<AdvanceBody>>,
) -> ApiResult<(StatusCode, Json<NodeJob>)> {
    let body = body.map(|b| b.0).unwrap_or(AdvanceBody {
        generate: true,
        ..Default::default()
    });
    let (status, out) = run(&s, move |e| {
        let node = e.advance_stage(&id, &body.prompt_delta, body.seed)?;
        queue(e, node, body.generate)
    })
    .await?;
    Ok((status, Json(out)))
}

pub async fn regenerate(
    State(s): State<AppState>,
    Path(id): Path<NodeId>,
    body: Option<Json<RegenerateBody>>,
) -> ApiResult<(StatusCode, Json<NodeJob>)> {
    let body = body.map(|b| b.0).unwrap_or(RegenerateBody {
        generate: true,
        ..Default::default()
    });
    let (status, out) = run(&s, move |e| {
        let options = RegenerateOptions {
            prompt: body.prompt,
            negative_prompt: body.negative_prompt,
            seed: body.seed,
            params: body.params,
        };
        let node = e.regenerate(&id, options)?;
        queue(e, node, body.generate)
    })
    .await?;
    Ok((status, Json(out)))
}

pub async fn inpaint(
    State(s): State<AppState>,
    Path(id): Path<NodeId>,
    body: Result<Json<InpaintBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<NodeJob>)> {
    let Json(body) = body?;
    let png = B64
        .decode(body.mask_b64.trim().as_bytes())
        .map_err(|e| ApiError::from(EngineError::UndecodableImage(e.to_string())))?;
    let mask = MaskRegion::from_png(&png)
        .map_err(|e| ApiError::from(EngineError::UndecodableImage(e.to_string())))?;
    let (status, out) = run(&s, move |e| {
        let node = e.inpaint(&id, &mask, &body.prompt)?;
        queue(e, node, body.generate)
    })
    .await?;
    Ok((status, Json(out)))
}

/// Multipart upload; the part named `image` (or else the first part) is used.
pub async fn control(
    State(s): State<AppState>,
    Path(id): Path<NodeId>,
    mut multipart: Multipart,
) -> ApiResult<Json<VersionNode>> {
    let mut image: Option<Bytes> = None;
    while let Some(field) = multipart.next_field().await? {
        let named = field.name() == Some("image");
        let bytes = field.bytes().await?;
        if named || image.is_none() {
            image = Some(bytes);
        }
        if named {
            break;
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("multipart body has no image part"))?;
    Ok(Json(run(&s, move |e| e.attach_control_image(&id, &image)).await?))
}

pub async fn label(
    State(s): State<AppState>,
    Path(id): Path<NodeId>,
    body: Result<Json<LabelBody>, JsonRejection>,
) -> ApiResult<Json<VersionNode>> {
    let Json(body) = body?;
    Ok(Json(run(&s, move |e| e.label(&id, &body.label)).await?))
}

pub async fn activate(
    State(s): State<AppState>,
    Path(id): Path<ProjectId>,
    body: Result<Json<ActivateBody>, JsonRejection>,
) -> ApiResult<Json<Project>> {
    let Json(body) = body?;
    Ok(Json(run(&s, move |e| e.activate(&id, &body.node_id)).await?))
}

pub async fn compare(
    State(s): State<AppState>,
    query: Result<Query<CompareQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let report = run(&s, move |e| e.compare(&q.a, &q.b)).await?;
    Ok(Json(report).into_response())
}

pub async fn ask(
    State(s): State<AppState>,
    body: Result<Json<AskBody>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(body) = body?;
    if body.node_id.is_none() && body.project_id.is_none() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "validation_failed",
            "node_id or project_id is required",
        ));
    }
    let exchange = run(&s, move |e| match (body.node_id, body.project_id) {
        (Some(node), _) => e.ask(&node, &body.question),
        (None, Some(project)) => e.ask_active(&project, &body.question),
        (None, None) => unreachable!("checked above"),
    })
    .await?;
    Ok(Json(exchange).into_response())
}

pub async fn blob(State(s): State<AppState>, Path(digest): Path<String>) -> ApiResult<Response> {
    let digest: Digest = digest.parse().map_err(|_| {
        ApiError::new(StatusCode::BAD_REQUEST, "validation_failed", format!("invalid digest {digest}"))
    })?;
    let bytes = run(&s, move |e| e.blob(&digest)).await?;
    let content_type = if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else {
        "application/octet-stream"
    };
    Ok((
        [
            (header::CONTENT_TYPE, content_type),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    )
        .into_response())
}

/// Seq the client has already seen, from `Last-Event-Seq` or `Last-Event-ID`.
fn last_seen(headers: &HeaderMap) -> ApiResult<Option<u64>> {
    for name in ["last-event-seq", "last-event-id"] {
        if let Some(v) = headers.get(name) {
            let text = v.to_str().unwrap_or("").trim();
            return text
                .parse()
                .map(Some)
                .map_err(|_| ApiError::bad_request(format!("{name} must be an integer seq")));
        }
    }
    Ok(None)
}

pub async fn events(
    State(s): State<AppState>,
    Path(id): Path<ProjectId>,
    headers: HeaderMap,
    query: Result<Query<EventsQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let after = last_seen(&headers)?.or(q.after);
    let stream = project_events(s.engine.clone(), id, after, q.follow)?;
    Ok(Sse::new(sse_events(stream))
        .keep_alive(KeepAlive::default())
        .into_response())
}
