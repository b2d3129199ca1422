//! Annotation service: serves pairs with their automatic annotations,
//! records verdicts in a durable log and reports agreement.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/pairs?split=` | pair summaries with verification progress |
//! | GET | `/api/pairs/{id}?annotator=` | one pair, as seen by an annotator |
//! | POST | `/api/pairs/{id}/verdicts` | submit a verdict |
//! | GET | `/api/agreement?a=&b=` | agreement between two annotators |
//! | GET | `/api/export` | adjudicated pairs as JSONL |
//!
//! Everything else is served from the static directory, when one is set.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use ctrltab_core::annotation::{AnnotationStore, KbDecision, Verdict};
use ctrltab_core::data::{read_pairs, to_jsonl, HighlightSet, Split};
use ctrltab_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::RwLock;
use tower_http::services::ServeDir;

pub type Shared = Arc<RwLock<AnnotationStore>>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot load dataset {path}: {source}")]
    Dataset { path: PathBuf, source: CoreError },
    #[error("cannot open verdict log {path}: {source}")]
    Log { path: PathBuf, source: CoreError },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server stopped: {0}")]
    Serve(std::io::Error),
}

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub dataset: PathBuf,
    pub verdict_log: PathBuf,
    pub bind: String,
    pub static_dir: Option<PathBuf>,
}

/// JSON error body.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

struct Failure(StatusCode, ApiError);

impl Failure {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Failure(status, ApiError { code: code.into(), message: message.into() })
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NotFound(_) => Failure::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            CoreError::Validation { .. } => Failure::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string()),
            CoreError::Invalid(_) | CoreError::Config(_) => Failure::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
            _ => Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, Failure>;

#[derive(Deserialize)]
struct SplitQuery {
    split: Option<String>,
}

async fn list_pairs(State(s): State<Shared>, Query(q): Query<SplitQuery>) -> ApiResult<impl IntoResponse> {
    let split = q.split.as_deref().map(str::parse::<Split>).transpose()?;
    Ok(Json(s.read().await.state().list(split)))
}

#[derive(Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

async fn get_pair(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<AnnotatorQuery>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.read().await.state().view(&id, q.annotator.as_deref())?))
}

/// Verdict body; `pair_id` comes from the path and must match when given.
#[derive(Deserialize)]
struct VerdictBody {
    pair_id: Option<String>,
    annotator_id: String,
    #[serde(default)]
    kb_decisions: Vec<KbDecision>,
    highlight_set: HighlightSet,
    #[serde(default)]
    timestamp: u64,
}

#[derive(Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
}

async fn post_verdict(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<VerdictBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(b) = body.map_err(|e| Failure::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    if b.pair_id.as_deref().is_some_and(|p| p != id) {
        return Err(Failure::new(StatusCode::BAD_REQUEST, "bad_request", "pair_id does not match the path"));
    }
    let v = Verdict {
        pair_id: id,
        annotator_id: b.annotator_id,
        kb_decisions: b.kb_decisions,
        highlight_set: b.highlight_set,
        timestamp: b.timestamp,
    };
    let seq = s.write().await.submit(v)?;
    Ok((StatusCode::CREATED, Json(Ack { seq })))
}

#[derive(Deserialize)]
struct AgreementQuery {
    a: Option<String>,
    b: Option<String>,
}

async fn agreement(State(s): State<Shared>, Query(q): Query<AgreementQuery>) -> ApiResult<impl IntoResponse> {
    let (Some(a), Some(b)) = (q.a, q.b) else {
        return Err(Failure::new(StatusCode::BAD_REQUEST, "bad_request", "both `a` and `b` are required"));
    };
    Ok(Json(s.read().await.state().agreement_report(&a, &b)?))
}

async fn export(State(s): State<Shared>) -> ApiResult<impl IntoResponse> {
    let body = to_jsonl(&s.read().await.state().export())?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

async fn api_fallback() -> Failure {
    Failure::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(store: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/pairs", get(list_pairs))
        .route("/pairs/{id}", get(get_pair))
        .route("/pairs/{id}/verdicts", axum::routing::post(post_verdict))
        .route("/agreement", get(agreement))
        .route("/export", get(export))
        .fallback(api_fallback)
        .with_state(store);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Loads the dataset, replays the log and binds. The returned listener is
/// ready for [`run`].
pub async fn bind(cfg: &ServeConfig) -> Result<(TcpListener, Router), ServiceError> {
    let pairs = read_pairs(&cfg.dataset).map_err(|source| ServiceError::Dataset { path: cfg.dataset.clone(), source })?;
    let store = AnnotationStore::open(pairs, &cfg.verdict_log)
        .map_err(|source| ServiceError::Log { path: cfg.verdict_log.clone(), source })?;
    let listener =
        TcpListener::bind(&cfg.bind).await.map_err(|source| ServiceError::Bind { addr: cfg.bind.clone(), source })?;
    Ok((listener, router(Arc::new(RwLock::new(store)), cfg.static_dir.clone())))
}

pub async fn run(listener: TcpListener, app: Router) -> Result<(), ServiceError> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("annotation service listening on http://{addr}");
    }
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}

pub async fn serve(cfg: ServeConfig) -> Result<SocketAddr, ServiceError> {
    let (listener, app) = bind(&cfg).await?;
    let addr = listener.local_addr().map_err(ServiceError::Serve)?;
    run(listener, app).await?;
    Ok(addr)
}
