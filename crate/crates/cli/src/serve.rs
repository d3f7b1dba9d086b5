//! `POST /retrieve` and `GET /healthz`.
//!
//! Retrieval runs on the blocking pool; a semaphore caps how many requests
//! are in retrieval at once, the rest wait.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use polysource_core::corpus::Modality;
use polysource_core::gateway::ImageRef;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::retriever::{Diagnostic, Retrieved, Retriever};
use crate::{commands, CliError, Loaded};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveRequest {
    question: String,
    #[serde(default)]
    image_b64: Option<String>,
    #[serde(default)]
    modality: Option<Modality>,
    /// Tagged query text; when absent the query generator is asked.
    #[serde(default)]
    query_set: Option<String>,
}

#[derive(Debug, Serialize)]
struct ReportOut {
    report_id: String,
    text: String,
    score: f64,
}

#[derive(Debug, Serialize)]
struct DocumentOut {
    id: String,
    corpus: String,
    text: String,
    score: Option<f64>,
}

#[derive(Debug, Serialize)]
struct RetrieveResponse {
    query_set: String,
    reports: Vec<ReportOut>,
    documents: Vec<DocumentOut>,
    diagnostics: Vec<Diagnostic>,
}

impl From<Retrieved> for RetrieveResponse {
    fn from(r: Retrieved) -> Self {
        let mut documents: Vec<DocumentOut> = r
            .outcome
            .bundle
            .documents
            .into_iter()
            .map(|d| DocumentOut { id: d.chunk_id, corpus: d.corpus.to_string(), text: d.text, score: Some(d.score) })
            .collect();
        for f in r.outcome.bundle.graph_facts {
            if !f.definition.trim().is_empty() {
                documents.push(DocumentOut {
                    id: format!("graph:{}#def", f.term_id),
                    corpus: "graph".into(),
                    text: format!("{}: {}", f.term, f.definition),
                    score: None,
                });
            }
            for (n, rel) in f.relations.into_iter().enumerate() {
                documents.push(DocumentOut {
                    id: format!("graph:{}#rel{}", f.term_id, n + 1),
                    corpus: "graph".into(),
                    text: rel.text,
                    score: Some(rel.score),
                });
            }
        }
        Self {
            query_set: r.query_set.serialize(),
            reports: r
                .reports
                .into_iter()
                .map(|x| ReportOut { report_id: x.report_id, text: x.text, score: x.score })
                .collect(),
            documents,
            diagnostics: r.diagnostics,
        }
    }
}

struct AppState {
    retriever: Retriever,
    permits: Semaphore,
}

enum ApiError {
    BadRequest(String),
    Internal { message: String, diagnostic_id: String },
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, Json(json!({ "error": m }))).into_response(),
            ApiError::Internal { message, diagnostic_id } => {
                eprintln!("{}", json!({ "diagnostic_id": diagnostic_id, "error": message }));
                (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    Json(json!({ "error": "retrieval failed", "diagnostic_id": diagnostic_id })),
                )
                    .into_response()
            }
        }
    }
}

fn diagnostic_id(body: &[u8]) -> String {
    Sha256::digest(body).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn handle(state: &AppState, body: &[u8]) -> Result<RetrieveResponse, ApiError> {
    let req: RetrieveRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid request: {e}")))?;
    if req.question.trim().is_empty() {
        return Err(ApiError::BadRequest("question must not be empty".into()));
    }
    let image = match &req.image_b64 {
        Some(b) => Some(ImageRef::Inline(
            base64::engine::general_purpose::STANDARD
                .decode(b.trim())
                .map_err(|e| ApiError::BadRequest(format!("image_b64 is not base64: {e}")))?
                .into(),
        )),
        None => None,
    };
    let r = &state.retriever;
    let internal = |message: String| ApiError::Internal { message, diagnostic_id: diagnostic_id(body) };
    let (qs, diags) = match &req.query_set {
        Some(text) => r.parse(text),
        None if r.has_generator() => r.generate_queries(&req.question, image.as_ref()).map_err(internal)?,
        None => return Err(ApiError::BadRequest("query_set is required: no query generator is configured".into())),
    };
    let got = r
        .run(qs, diags, image.as_ref(), req.modality)
        .map_err(|e| internal(e.to_string()))?;
    Ok(got.into())
}

async fn retrieve(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let _permit = state.permits.acquire().await.expect("semaphore never closed");
    let st = state.clone();
    let body_ref = body.clone();
    match tokio::task::spawn_blocking(move || handle(&st, &body_ref)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(join) => ApiError::Internal { message: join.to_string(), diagnostic_id: diagnostic_id(&body) }
            .into_response(),
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

/// Loads the stores and builds the router without binding a socket.
pub fn router(loaded: &Loaded) -> Result<Router, CliError> {
    let kb = commands::load_knowledge_base(loaded, None)?;
    let cache = loaded.cache()?;
    let retriever = Retriever::open(loaded, kb, &cache, loaded.config.query_generator_url.is_some())?;
    let state = Arc::new(AppState {
        retriever,
        permits: Semaphore::new(loaded.config.max_concurrent_requests),
    });
    Ok(Router::new()
        .route("/retrieve", post(retrieve))
        .route("/healthz", get(healthz))
        .with_state(state))
}

/// Serves until interrupted.
pub fn run(loaded: &Loaded) -> Result<(), CliError> {
    let app = router(loaded)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&loaded.config.bind)
            .await
            .map_err(|e| CliError::Config(format!("cannot bind {}: {e}", loaded.config.bind)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Pipeline(e.to_string()))?;
        eprintln!("{}", json!({ "listening": addr.to_string() }));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Pipeline(e.to_string()))
    })
}
