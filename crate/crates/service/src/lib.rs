//! HTTP front end for the completion engine.
//!
//! The engine lives behind an `RwLock<Arc<Engine>>`. Readers clone the `Arc`
//! and decode without holding the lock; ingestion builds a new engine aside
//! and swaps it in whole.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use qac_core::context::DocumentRecord;
use qac_core::engine::{Engine, IngestStats, Overrides};
use qac_core::{QacError, Source, Suggestion};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

pub struct AppState {
    engine: RwLock<Arc<Engine>>,
    /// Serializes ingestions so none is lost between read and swap.
    ingest: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(engine: Engine) -> Arc<Self> {
        Arc::new(Self { engine: RwLock::new(Arc::new(engine)), ingest: tokio::sync::Mutex::new(()) })
    }

    /// The current epoch.
    pub fn snapshot(&self) -> Arc<Engine> {
        self.engine.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn swap(&self, next: Engine) {
        *self.engine.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, code: "invalid_input", message: message.into() }
    }
}

impl From<QacError> for ApiError {
    fn from(e: QacError) -> Self {
        let (status, code) = match &e {
            QacError::InvalidInput(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
            QacError::Parse(_) => (StatusCode::BAD_REQUEST, "parse_error"),
            QacError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            QacError::Unavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "unavailable"),
            QacError::CorruptFile(_) | QacError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self { status, code, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub documents: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub doc_id: String,
    pub title: String,
    pub url: String,
    pub queries: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestResponse {
    pub stats: IngestStatsBody,
}

/// Wire form of [`IngestStats`].
#[derive(Debug, Serialize, Deserialize)]
pub struct IngestStatsBody {
    pub doc_id: String,
    pub docq_terminals: usize,
    pub docc_terminals: usize,
    pub guidance_sequences: usize,
    pub sentences: usize,
    pub keyphrases: usize,
    pub replaced: bool,
}

impl From<IngestStats> for IngestStatsBody {
    fn from(s: IngestStats) -> Self {
        Self {
            doc_id: s.doc_id,
            docq_terminals: s.docq_terminals,
            docc_terminals: s.docc_terminals,
            guidance_sequences: s.guidance_sequences,
            sentences: s.sentences,
            keyphrases: s.keyphrases,
            replaced: s.replaced,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub doc_id: Option<String>,
    pub prefix: String,
    pub mode: Source,
    pub suggestions: Vec<Suggestion>,
    pub latency_ms: f64,
}

/// Query parameters as received; parsed by [`parse_overrides`].
#[derive(Debug, Default, Deserialize)]
pub struct CompleteParams {
    pub doc_id: Option<String>,
    pub prefix: Option<String>,
    pub mode: Option<String>,
    pub k: Option<String>,
    pub alpha: Option<String>,
    pub beta: Option<String>,
    pub bias: Option<String>,
    pub lambda: Option<String>,
    pub context: Option<String>,
    pub beam: Option<String>,
    pub trie: Option<String>,
}

fn parse_field<T: std::str::FromStr>(name: &str, v: &Option<String>) -> Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    v.as_deref()
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| ApiError::bad_request(format!("{name}: {e}"))))
        .transpose()
}

fn parse_real(name: &str, v: &Option<String>) -> Result<Option<f64>, ApiError> {
    let x = parse_field::<f64>(name, v)?;
    if x.is_some_and(|x| !x.is_finite()) {
        return Err(ApiError::bad_request(format!("{name}: must be finite")));
    }
    Ok(x)
}

pub fn parse_overrides(p: &CompleteParams) -> Result<Overrides, ApiError> {
    Ok(Overrides {
        mode: parse_field("mode", &p.mode)?,
        trie: parse_field("trie", &p.trie)?,
        context: parse_field("context", &p.context)?,
        k: parse_field("k", &p.k)?,
        alpha: parse_real("alpha", &p.alpha)?,
        beta: parse_real("beta", &p.beta)?,
        bias: parse_real("bias", &p.bias)?,
        lambda: parse_real("lambda", &p.lambda)?,
        beam: parse_field("beam", &p.beam)?,
    })
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        documents: state.snapshot().len(),
    })
}

async fn list_documents(State(state): State<Arc<AppState>>) -> Json<Vec<DocumentSummary>> {
    let engine = state.snapshot();
    Json(
        engine
            .documents()
            .map(|d| DocumentSummary {
                doc_id: d.doc_id.clone(),
                title: d.title.clone(),
                url: d.url.clone(),
                queries: d.queries.len(),
            })
            .collect(),
    )
}

async fn ingest(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<IngestResponse>, ApiError> {
    let record: DocumentRecord =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("document record: {e}")))?;
    let _guard = state.ingest.lock().await;
    let current = state.snapshot();
    let (next, stats) = tokio::task::spawn_blocking(move || current.with_document(record))
        .await
        .map_err(|e| ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: "internal", message: e.to_string() })??;
    state.swap(next);
    log::info!("ingested {} (replaced: {})", stats.doc_id, stats.replaced);
    Ok(Json(IngestResponse { stats: stats.into() }))
}

async fn complete(
    State(state): State<Arc<AppState>>,
    Query(params): Query<CompleteParams>,
) -> Result<Json<CompleteResponse>, ApiError> {
    let overrides = parse_overrides(&params)?;
    let prefix = params.prefix.clone().ok_or_else(|| ApiError::bad_request("prefix: required"))?;
    let doc_id = params.doc_id.clone().filter(|d| !d.is_empty());
    let engine = state.snapshot();
    let opts = engine.defaults().with(&overrides)?;
    let mode = opts.mode;
    let (suggestions, latency_ms) = {
        let prefix = prefix.clone();
        let doc_id = doc_id.clone();
        tokio::task::spawn_blocking(move || {
            let t = Instant::now();
            let out = engine.complete(doc_id.as_deref(), &prefix, &opts);
            (out, t.elapsed().as_secs_f64() * 1e3)
        })
        .await
        .map_err(|e| ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: "internal", message: e.to_string() })?
    };
    let suggestions = suggestions?;
    log::debug!("complete {doc_id:?} {prefix:?} {mode} in {latency_ms:.2} ms");
    Ok(Json(CompleteResponse { doc_id, prefix, mode, suggestions, latency_ms }))
}

async fn not_found() -> ApiError {
    ApiError { status: StatusCode::NOT_FOUND, code: "not_found", message: "no such route".into() }
}

#[derive(Debug, Clone, Default)]
pub struct ServeConfig {
    pub addr: Option<SocketAddr>,
    /// Directory of UI files served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
}

pub fn router(state: Arc<AppState>, cfg: &ServeConfig) -> Router {
    let cors = match cfg.cors_origin.as_deref().and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => CorsLayer::new().allow_origin(origin),
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/documents", get(list_documents).post(ingest))
        .route("/v1/complete", get(complete));
    let app = match &cfg.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    app.layer(cors).with_state(state)
}

pub const DEFAULT_PORT: u16 = 8080;

/// Serves until ctrl-c.
pub async fn serve(engine: Engine, cfg: ServeConfig) -> std::io::Result<()> {
    let addr = cfg.addr.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)));
    let app = router(AppState::new(engine), &cfg);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
