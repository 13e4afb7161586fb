use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use http_body_util::BodyExt;
use sakugaflow_api::{router, ApiOptions, API_ERROR_CODES};
use sakugaflow_core::backend::{Backend, BackendDescriptor, BackendError, BlobSource, MockBackend};
use sakugaflow_core::tutor::RemoteTutorConfig;
use sakugaflow_core::{
    Canvas, Engine, EngineConfig, GenerationRequest, ImageBlob, MaskRegion, NodeId, Rgba,
    TreeDocument, TutorConfig, ERROR_CODES,
};
use serde_json::{json, Value};
use tower::ServiceExt;

fn engine_with(dir: &std::path::Path, backend: Arc<dyn Backend>, tweak: impl FnOnce(&mut EngineConfig)) -> Arc<Engine> {
    let mut cfg = EngineConfig::new(dir);
    cfg.id_seed = Some(3);
    cfg.sync_writes = false;
    tweak(&mut cfg);
    Arc::new(Engine::open(cfg, backend).unwrap())
}

fn app(engine: &Arc<Engine>) -> Router {
    router(engine.clone(), &ApiOptions::default())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn wait_completed(app: &Router, node: &str) -> Value {
    for _ in 0..500 {
        let (_, n) = call(app, "GET", &format!("/v1/nodes/{node}"), None).await;
        if n["status"] == "completed" || n["status"] == "failed" {
            return n;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("node {node} never finished");
}

async fn new_project(app: &Router, theme: &str) -> Value {
    let (status, p) = call(app, "POST", "/v1/projects", Some(json!({"theme": theme, "width": 32, "height": 32, "seed": 4}))).await;
    assert_eq!(status, StatusCode::CREATED, "{p}");
    p
}

fn assert_error(status: StatusCode, body: &Value, want_status: StatusCode, code: &str) {
    assert_eq!(status, want_status, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert!(API_ERROR_CODES.contains(&code));
}

#[test]
fn every_engine_code_is_documented() {
    for code in ERROR_CODES {
        assert!(API_ERROR_CODES.contains(code), "{code}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn project_lifecycle_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), Arc::new(MockBackend::new()), |_| {});
    let app = app(&engine);
    let p = new_project(&app, "space whale").await;
    let pid = p["id"].as_str().unwrap().to_string();
    let root = p["root_node"].as_str().unwrap().to_string();

    let (status, view) = call(&app, "GET", &format!("/v1/projects/{pid}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["nodes"].as_array().unwrap().len(), 1);
    assert_eq!(view["nodes"][0]["prompt"], "rough sketch of space whale");

    let (status, out) = call(&app, "POST", &format!("/v1/nodes/{root}/generate"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{out}");
    assert!(out["job"]["id"].is_string());
    let done = wait_completed(&app, &root).await;
    assert_eq!(done["status"], "completed");

    let (status, err) = call(&app, "POST", &format!("/v1/nodes/{root}/generate"), None).await;
    assert_error(status, &err, StatusCode::CONFLICT, "already_completed");

    let (status, out) = call(&app, "POST", &format!("/v1/nodes/{root}/advance"), Some(json!({"prompt_delta": "glowing"}))).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{out}");
    assert_eq!(out["node"]["stage"], "line");
    assert_eq!(out["node"]["prompt"], "clean line art of space whale, glowing");
    let line = out["node"]["id"].as_str().unwrap().to_string();
    wait_completed(&app, &line).await;

    // Advancing without generating leaves a draft and answers 201.
    let (status, out) = call(&app, "POST", &format!("/v1/nodes/{line}/advance"), Some(json!({"generate": false}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(out["job"].is_null());
    assert_eq!(out["node"]["status"], "draft");

    let (status, out) = call(&app, "POST", &format!("/v1/nodes/{line}/regenerate"), Some(json!({"seed": 77}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(out["node"]["seed"], 77);
    let alt = out["node"]["id"].as_str().unwrap().to_string();
    wait_completed(&app, &alt).await;

    let (status, report) = call(&app, "GET", &format!("/v1/compare?a={line}&b={alt}"), None).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["lowest_common_ancestor"], line);
    assert_eq!(report["total_pixels"], 32 * 32);

    let (status, tree) = call(&app, "GET", &format!("/v1/projects/{pid}/tree"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tree["nodes"].as_array().unwrap().len(), 4);
    assert_eq!(tree["edges"].as_array().unwrap().len(), 3);

    let (status, proj) = call(&app, "POST", &format!("/v1/projects/{pid}/activate"), Some(json!({"node_id": root}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(proj["active_node"], root);

    let (status, node) = call(&app, "POST", &format!("/v1/nodes/{alt}/label"), Some(json!({"label": "blue"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(node["label"], "blue");

    let (status, list) = call(&app, "GET", "/v1/projects", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn blobs_are_served_by_digest() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), Arc::new(MockBackend::new()), |_| {});
    let app = app(&engine);
    let p = new_project(&app, "moth").await;
    let root = p["root_node"].as_str().unwrap();
    call(&app, "POST", &format!("/v1/nodes/{root}/generate"), None).await;
    let node = wait_completed(&app, root).await;
    let digest = node["image"].as_str().unwrap();

    let resp = app
        .clone()
        .oneshot(Request::get(format!("/v1/blobs/{digest}")).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/png");
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(sakugaflow_core::Digest::of(&bytes).to_hex(), digest);

    let unknown = "0".repeat(64);
    let (status, err) = call(&app, "GET", &format!("/v1/blobs/{unknown}"), None).await;
    assert_error(status, &err, StatusCode::NOT_FOUND, "not_found");
    let (status, err) = call(&app, "GET", "/v1/blobs/xyz", None).await;
    assert_error(status, &err, StatusCode::BAD_REQUEST, "validation_failed");
}

#[tokio::test(flavor = "multi_thread")]
async fn validation_and_lookup_errors() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), Arc::new(MockBackend::new()), |_| {});
    let app = app(&engine);
    let (status, err) = call(&app, "POST", "/v1/projects", Some(json!({"theme": ""}))).await;
    assert_error(status, &err, StatusCode::BAD_REQUEST, "validation_failed");
    let (status, err) = call(&app, "POST", "/v1/projects", Some(json!({"theme": "x", "width": 0}))).await;
    assert_error(status, &err, StatusCode::BAD_REQUEST, "validation_failed");
    let (status, err) = call(&app, "POST", "/v1/projects", Some(json!({"nope": 1}))).await;
    assert_error(status, &err, StatusCode::BAD_REQUEST, "bad_request");
    let (status, err) = call(&app, "GET", "/v1/nodes/missing", None).await;
    assert_error(status, &err, StatusCode::NOT_FOUND, "not_found");
    let (status, err) = call(&app, "GET", "/v1/projects/missing", None).await;
    assert_error(status, &err, StatusCode::NOT_FOUND, "not_found");
    let (status, err) = call(&app, "GET", "/v1/nowhere", None).await;
    assert_error(status, &err, StatusCode::NOT_FOUND, "not_found");

    let p = new_project(&app, "crab").await;
    let root = p["root_node"].as_str().unwrap();
    let (status, err) = call(&app, "POST", &format!("/v1/nodes/{root}/advance"), None).await;
    assert_error(status, &err, StatusCode::CONFLICT, "not_completed");
    let (status, err) = call(&app, "POST", "/v1/tutor/ask", Some(json!({"question": "hi"}))).await;
    assert_error(status, &err, StatusCode::BAD_REQUEST, "validation_failed");
    let (status, err) = call(&app, "POST", "/v1/tutor/ask", Some(json!({"node_id": root, "question": " "}))).await;
    assert_error(status, &err, StatusCode::BAD_REQUEST, "validation_failed");
}

#[tokio::test(flavor = "multi_thread")]
async fn inpaint_and_control_uploads() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), Arc::new(MockBackend::new()), |_| {});
    let app = app(&engine);
    let p = new_project(&app, "frog").await;
    let root = p["root_node"].as_str().unwrap().to_string();

    let sketch = Rgba::new(Canvas::new(64, 64).unwrap(), [200, 200, 200, 255].repeat(64 * 64)).unwrap();
    let boundary = "XBOUNDARY";
    let mut body = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"s.png\"\r\nContent-Type: image/png\r\n\r\n"
    )
    .into_bytes();
    body.extend(sketch.encode_png().unwrap());
    body.extend(format!("\r\n--{boundary}--\r\n").as_bytes());
    let resp = app
        .clone()
        .oneshot(
            Request::post(format!("/v1/nodes/{root}/control"))
                .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
                .body(Body::from(body))
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let node: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert!(node["control_image"].is_string());
    assert_eq!(node["params"]["control_source"], json!({"width": 64, "height": 64}));

    call(&app, "POST", &format!("/v1/nodes/{root}/generate"), None).await;
    let parent = wait_completed(&app, &root).await;

    let canvas = Canvas::new(32, 32).unwrap();
    let mask = MaskRegion::rect(canvas, 4, 4, 8, 8);
    let mask_b64 = B64.encode(mask.to_png().unwrap());
    let (status, out) = call(&app, "POST", &format!("/v1/nodes/{root}/inpaint"), Some(json!({"mask_b64": mask_b64, "prompt": "open mouth"}))).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{out}");
    let child = out["node"]["id"].as_str().unwrap().to_string();
    let child = wait_completed(&app, &child).await;
    assert_eq!(child["stage"], "rough");
    let (_, report) = call(&app, "GET", &format!("/v1/compare?a={}&b={}", parent["id"].as_str().unwrap(), child["id"].as_str().unwrap()), None).await;
    assert!(report["differing_pixels"].as_u64().unwrap() <= 64);

    let empty = B64.encode(MaskRegion::empty(canvas).to_png().unwrap());
    let (status, err) = call(&app, "POST", &format!("/v1/nodes/{root}/inpaint"), Some(json!({"mask_b64": empty}))).await;
    assert_error(status, &err, StatusCode::BAD_REQUEST, "empty_selection");
    let wrong = B64.encode(MaskRegion::full(Canvas::new(8, 8).unwrap()).to_png().unwrap());
    let (status, err) = call(&app, "POST", &format!("/v1/nodes/{root}/inpaint"), Some(json!({"mask_b64": wrong}))).await;
    assert_error(status, &err, StatusCode::BAD_REQUEST, "dimension_mismatch");
    assert_eq!(err["details"]["expected"], json!({"width": 32, "height": 32}));
    let (status, err) = call(&app, "POST", &format!("/v1/nodes/{root}/inpaint"), Some(json!({"mask_b64": "!!"}))).await;
    assert_error(status, &err, StatusCode::BAD_REQUEST, "undecodable_image");
}

/// Blocks every generation until released.
struct Gate {
    descriptor: BackendDescriptor,
    open: Arc<(Mutex<bool>, Condvar)>,
}

impl Backend for Gate {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, req: &GenerationRequest, blobs: &dyn BlobSource) -> Result<ImageBlob, BackendError> {
        let (lock, cv) = &*self.open;
        let _open = cv.wait_while(lock.lock().unwrap(), |o| !*o).unwrap();
        MockBackend::new().generate(req, blobs)
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn generate_on_pending_node_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let open = Arc::new((Mutex::new(false), Condvar::new()));
    let gate = Gate {
        descriptor: MockBackend::new().descriptor().clone(),
        open: open.clone(),
    };
    let engine = engine_with(dir.path(), Arc::new(gate), |c| c.cache_entries = 0);
    let app = app(&engine);
    let p = new_project(&app, "bat").await;
    let root = p["root_node"].as_str().unwrap();
    let (status, out) = call(&app, "POST", &format!("/v1/nodes/{root}/generate"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(out["node"]["status"], "pending");
    let (status, err) = call(&app, "POST", &format!("/v1/nodes/{root}/generate"), None).await;
    assert_error(status, &err, StatusCode::CONFLICT, "already_pending");
    *open.0.lock().unwrap() = true;
    open.1.notify_all();
    assert_eq!(wait_completed(&app, root).await["status"], "completed");
}

#[tokio::test(flavor = "multi_thread")]
async fn tutor_over_http_and_unavailable_remote() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), Arc::new(MockBackend::new()), |_| {});
    let app = app(&engine);
    let p = new_project(&app, "otter").await;
    let pid = p["id"].as_str().unwrap();
    let (status, ex) = call(&app, "POST", "/v1/tutor/ask", Some(json!({"project_id": pid, "question": "is the pose clear?"}))).await;
    assert_eq!(status, StatusCode::OK, "{ex}");
    assert_eq!(ex["source"], "offline");
    assert!(ex["answer"].as_str().unwrap().contains("adjusting pose or composition"));
    let (_, all) = call(&app, "GET", &format!("/v1/projects/{pid}/exchanges"), None).await;
    assert_eq!(all.as_array().unwrap().len(), 1);

    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), Arc::new(MockBackend::new()), |c| {
        let mut remote = RemoteTutorConfig::new("http://127.0.0.1:9");
        remote.timeout = Duration::from_secs(2);
        c.tutor = TutorConfig {
            remote: Some(remote),
            fallback: false,
            ..TutorConfig::default()
        };
    });
    let app = router(engine.clone(), &ApiOptions::default());
    let p = new_project(&app, "otter").await;
    let root = p["root_node"].as_str().unwrap();
    let (status, err) = call(&app, "POST", "/v1/tutor/ask", Some(json!({"node_id": root, "question": "?"}))).await;
    assert_error(status, &err, StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable");
}

/// The HTTP layer adds nothing: the same operations through the engine
/// directly and through the router give the same tree.
#[tokio::test(flavor = "multi_thread")]
async fn http_and_direct_engine_agree() {
    let direct_dir = tempfile::tempdir().unwrap();
    let http_dir = tempfile::tempdir().unwrap();
    let inline = |c: &mut EngineConfig| c.parallel_jobs = 0;
    let direct = engine_with(direct_dir.path(), Arc::new(MockBackend::new()), inline);
    let via_http = engine_with(http_dir.path(), Arc::new(MockBackend::new()), inline);

    let direct_tree: TreeDocument = {
        let e = direct.clone();
        tokio::task::spawn_blocking(move || {
            let p = e.create_project("heron", Some(Canvas::new(32, 32).unwrap()), Some(4)).unwrap();
            e.generate(&p.root_node).unwrap();
            let line = e.advance_stage(&p.root_node, "wading", None).unwrap();
            e.generate(&line.id).unwrap();
            let alt = e.regenerate(&line.id, sakugaflow_core::RegenerateOptions { seed: Some(5), ..Default::default() }).unwrap();
            e.generate(&alt.id).unwrap();
            e.activate(&p.id, &line.id).unwrap();
            e.export_tree(&p.id).unwrap()
        })
        .await
        .unwrap()
    };

    let app = app(&via_http);
    let p = new_project(&app, "heron").await;
    let pid = p["id"].as_str().unwrap();
    let root = p["root_node"].as_str().unwrap();
    call(&app, "POST", &format!("/v1/nodes/{root}/generate"), None).await;
    let (_, line) = call(&app, "POST", &format!("/v1/nodes/{root}/advance"), Some(json!({"prompt_delta": "wading"}))).await;
    let line = line["node"]["id"].as_str().unwrap().to_string();
    call(&app, "POST", &format!("/v1/nodes/{line}/regenerate"), Some(json!({"seed": 5}))).await;
    call(&app, "POST", &format!("/v1/projects/{pid}/activate"), Some(json!({"node_id": line}))).await;
    let (_, tree) = call(&app, "GET", &format!("/v1/projects/{pid}/tree"), None).await;
    let http_tree: TreeDocument = serde_json::from_value(tree).unwrap();
    assert_eq!(http_tree, direct_tree);
    assert_eq!(http_tree.active, NodeId::new(line));
}

#[tokio::test(flavor = "multi_thread")]
async fn cors_origin_is_configurable() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), Arc::new(MockBackend::new()), |_| {});
    let options = ApiOptions {
        cors_origins: vec!["http://localhost:5173".into()],
        ui_dir: None,
    };
    let app = router(engine, &options);
    let resp = app
        .oneshot(
            Request::get("/v1/health")
                .header(header::ORIGIN, "http://localhost:5173")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");
}
