//! HTTP facade over the pipeline engine.
//!
//! Every route is a thin adapter: decode the request, call one engine
//! operation on the blocking pool, encode the result. Generation never
//! blocks a request; the generate family answers 202 and results arrive on
//! the project's event stream.

pub mod error;
pub mod routes;
pub mod stream;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::{HeaderName, HeaderValue, Method};
use axum::routing::{get, post};
use axum::Router;
use sakugaflow_core::Engine;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

pub use error::{ApiError, API_ERROR_CODES};
pub use routes::AppState;

#[derive(Debug, Clone, Default)]
pub struct ApiOptions {
    /// Origins allowed to call the API from a browser; `*` allows any.
    pub cors_origins: Vec<String>,
    /// Static files (the companion UI) served for paths outside `/v1`.
    pub ui_dir: Option<PathBuf>,
}

/// Every served route, as `METHOD path`.
pub const ROUTES: &[&str] = &[
    "GET /v1/health",
    "GET /v1/projects",
    "POST /v1/projects",
    "GET /v1/projects/{id}",
    "GET /v1/projects/{id}/tree",
    "GET /v1/projects/{id}/events",
    "GET /v1/projects/{id}/exchanges",
    "POST /v1/projects/{id}/activate",
    "GET /v1/nodes/{id}",
    "POST /v1/nodes/{id}/generate",
    "POST /v1/nodes/{id}/advance",
    "POST /v1/nodes/{id}/regenerate",
    "POST /v1/nodes/{id}/inpaint",
    "POST /v1/nodes/{id}/control",
    "POST /v1/nodes/{id}/label",
    "GET /v1/jobs/{id}",
    "GET /v1/compare",
    "POST /v1/tutor/ask",
    "GET /v1/blobs/{digest}",
];

fn cors(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::from(Any)
    } else {
        let values: Vec<HeaderValue> = origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        AllowOrigin::list(values)
    };
    Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([
                axum::http::header::CONTENT_TYPE,
                HeaderName::from_static("last-event-seq"),
                HeaderName::from_static("last-event-id"),
            ]),
    )
}

pub fn router(engine: Arc<Engine>, options: &ApiOptions) -> Router {
    use routes::*;
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/projects", get(list_projects).post(create_project))
        .route("/v1/projects/{id}", get(get_project))
        .route("/v1/projects/{id}/tree", get(get_tree))
        .route("/v1/projects/{id}/events", get(events))
        .route("/v1/projects/{id}/exchanges", get(get_exchanges))
        .route("/v1/projects/{id}/activate", post(activate))
        .route("/v1/nodes/{id}", get(get_node))
        .route("/v1/nodes/{id}/generate", post(generate))
        .route("/v1/nodes/{id}/advance", post(advance))
        .route("/v1/nodes/{id}/regenerate", post(regenerate))
        .route("/v1/nodes/{id}/inpaint", post(inpaint))
        .route("/v1/nodes/{id}/control", post(control))
        .route("/v1/nodes/{id}/label", post(label))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/compare", get(compare))
        .route("/v1/tutor/ask", post(ask))
        .route("/v1/blobs/{digest}", get(blob))
        .with_state(AppState { engine });
    let mut app = match &options.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::not_found("no such route") }),
    };
    if let Some(layer) = cors(&options.cors_origins) {
        app = app.layer(layer);
    }
    app
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).await
}
