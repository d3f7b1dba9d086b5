//! Clients for external model services: text and image embedders, a
//! cross-encoder reranker and generative endpoints.
//!
//! Every call goes through [`Gateway`], which enforces the endpoint kind,
//! splits batches, consults the response cache, bounds in-flight requests
//! and retries transient failures. The wire side is a [`Backend`]: either
//! [`HttpBackend`] or one of the deterministic mocks in [`mock`].

mod backend;
mod cache;
pub mod mock;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use backend::{Backend, BackendError, HttpBackend};
pub use cache::{cache_key, hex_digest, ResponseCache, CACHE_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    TextEmbed,
    ImageEmbed,
    Rerank,
    Generate,
}

impl fmt::Display for EndpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndpointKind::TextEmbed => "text_embed",
            EndpointKind::ImageEmbed => "image_embed",
            EndpointKind::Rerank => "rerank",
            EndpointKind::Generate => "generate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub kind: EndpointKind,
    pub model_id: String,
    pub base_url: String,
    pub max_batch: usize,
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// First retry delay; doubles on each further attempt.
    pub backoff: Duration,
}

impl ModelEndpoint {
    pub fn new(kind: EndpointKind, model_id: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            kind,
            model_id: model_id.into(),
            base_url: base_url.into(),
            max_batch: 32,
            timeout: Duration::from_secs(60),
            max_retries: 2,
            max_in_flight: 8,
            backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("endpoint '{model_id}' is {actual}, operation needs {expected}")]
    WrongKind {
        model_id: String,
        expected: EndpointKind,
        actual: EndpointKind,
    },
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("transport failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("service rejected request ({code}): {body}")]
    Rejected { code: u16, body: String },
    #[error("unscripted request {0}")]
    Unscripted(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// A dense vector with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, GatewayError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GatewayError::Protocol(format!("non-finite component at {i}")));
        }
        Ok(Self(values))
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// An image either on disk or already in memory.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageRef {
    Path(PathBuf),
    Inline(Arc<[u8]>),
}

impl ImageRef {
    pub fn bytes(&self) -> Result<Arc<[u8]>, GatewayError> {
        match self {
            ImageRef::Path(p) => std::fs::read(p)
                .map(Arc::from)
                .map_err(|e| GatewayError::Input(format!("cannot read image {}: {e}", p.display()))),
            ImageRef::Inline(b) => Ok(b.clone()),
        }
    }
}

impl From<PathBuf> for ImageRef {
    fn from(p: PathBuf) -> Self {
        ImageRef::Path(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt_text: String,
    pub image_refs: Vec<ImageRef>,
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn new(prompt_text: impl Into<String>, image_refs: Vec<ImageRef>) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            image_refs,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    /// Logical requests put on the wire (one per batch).
    pub requests: u64,
    /// Individual wire attempts including retries.
    pub attempts: u64,
    pub cache_hits: u64,
}

struct Limiter {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.max {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Client for one model endpoint. Safe to share across threads.
pub struct Gateway {
    endpoint: ModelEndpoint,
    backend: Arc<dyn Backend>,
    cache: Arc<ResponseCache>,
    limiter: Limiter,
    dims: OnceLock<usize>,
    requests: AtomicU64,
    attempts: AtomicU64,
    cache_hits: AtomicU64,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(endpoint: ModelEndpoint, backend: Arc<dyn Backend>, cache: Arc<ResponseCache>) -> Self {
        let limiter = Limiter::new(endpoint.max_in_flight);
        Self {
            endpoint,
            backend,
            cache,
            limiter,
            dims: OnceLock::new(),
            requests: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    /// Builds the backend from `base_url`: `mock://...` selects an
    /// in-process mock, anything else is an HTTP endpoint.
    pub fn connect(endpoint: ModelEndpoint, cache: Arc<ResponseCache>) -> Result<Self, GatewayError> {
        if endpoint.max_batch == 0 {
            return Err(GatewayError::Config("max_batch must be at least 1".into()));
        }
        let backend: Arc<dyn Backend> = match endpoint.base_url.strip_prefix("mock://") {
            Some(target) => mock_backend(endpoint.kind, target)?,
            None => Arc::new(HttpBackend::new(endpoint.base_url.clone(), endpoint.timeout)),
        };
        Ok(Self::new(endpoint, backend, cache))
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn model_id(&self) -> &str {
        &self.endpoint.model_id
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.requests.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    fn require(&self, expected: EndpointKind) -> Result<(), GatewayError> {
        if self.endpoint.kind != expected {
            return Err(GatewayError::WrongKind {
                model_id: self.endpoint.model_id.clone(),
                expected,
                actual: self.endpoint.kind,
            });
        }
        Ok(())
    }

    fn key(&self, payload: &Value) -> String {
        cache_key(self.endpoint.kind, &self.endpoint.model_id, payload)
    }

    fn cached(&self, key: &str) -> Option<Value> {
        let hit = self.cache.get(key);
        if hit.is_some() {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
        }
        hit
    }

    /// One logical request with bounded concurrency and retries.
    fn send(&self, body: &Value) -> Result<Value, GatewayError> {
        let _permit = self.limiter.acquire();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let max_attempts = self.endpoint.max_retries + 1;
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 1..=max_attempts {
            self.attempts.fetch_add(1, Ordering::Relaxed);
            match self.backend.post(body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    last = e;
                    if attempt < max_attempts {
                        std::thread::sleep(self.endpoint.backoff * 2u32.pow(attempt - 1));
                    }
                }
                Err(BackendError::Status { code, body }) => {
                    return Err(GatewayError::Rejected { code, body })
                }
                Err(BackendError::Unscripted(k)) => return Err(GatewayError::Unscripted(k)),
                Err(e) => return Err(GatewayError::Protocol(e.to_string())),
            }
        }
        Err(match last {
            BackendError::Timeout => GatewayError::Timeout {
                attempts: max_attempts,
            },
            other => GatewayError::Exhausted {
                attempts: max_attempts,
                last: other.to_string(),
            },
        })
    }

    fn check_dims(&self, dims: usize) -> Result<(), GatewayError> {
        let expected = *self.dims.get_or_init(|| dims);
        if expected != dims {
            return Err(GatewayError::Protocol(format!(
                "model '{}' returned {dims} dims, expected {expected}",
                self.endpoint.model_id
            )));
        }
        Ok(())
    }

    fn parse_vector(&self, v: &Value) -> Result<Embedding, GatewayError> {
        let values: Vec<f64> = serde_json::from_value(v.clone())
            .map_err(|e| GatewayError::Protocol(format!("bad vector: {e}")))?;
        let emb = Embedding::new(values)?;
        self.check_dims(emb.dims())?;
        Ok(emb)
    }

    /// Output index `i` always corresponds to input index `i`.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>, GatewayError> {
        self.require(EndpointKind::TextEmbed)?;
        let keys: Vec<String> = texts.iter().map(|t| self.key(&json!({ "text": t }))).collect();
        let mut found: HashMap<&str, Embedding> = HashMap::new();
        let mut pending: HashSet<&str> = HashSet::new();
        let mut misses: Vec<usize> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            if found.contains_key(key.as_str()) || !pending.insert(key.as_str()) {
                continue;
            }
            match self.cached(key) {
                Some(v) => {
                    found.insert(key, self.parse_vector(&v)?);
                }
                None => misses.push(i),
            }
        }

        for batch in misses.chunks(self.endpoint.max_batch) {
            let batch_texts: Vec<&str> = batch.iter().map(|&i| texts[i].as_str()).collect();
            let resp = self.send(&json!({ "model": self.endpoint.model_id, "texts": batch_texts }))?;
            let vectors = resp
                .get("vectors")
                .and_then(Value::as_array)
                .ok_or_else(|| GatewayError::Protocol("response lacks 'vectors'".into()))?;
            if vectors.len() != batch.len() {
                return Err(GatewayError::Protocol(format!(
                    "sent {} texts, received {} vectors",
                    batch.len(),
                    vectors.len()
                )));
            }
            let parsed = vectors
                .iter()
                .map(|v| self.parse_vector(v))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(first) = parsed.first() {
                if parsed.iter().any(|e| e.dims() != first.dims()) {
                    return Err(GatewayError::Protocol("dimension mismatch within batch".into()));
                }
            }
            for (&i, emb) in batch.iter().zip(parsed) {
                self.cache.put(keys[i].clone(), json!(emb.values()));
                found.insert(&keys[i], emb);
            }
        }

        Ok(keys.iter().map(|k| found[k.as_str()].clone()).collect())
    }

    pub fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError> {
        Ok(self.embed_texts(&[text.to_string()])?.remove(0))
    }

    pub fn embed_image(&self, image: &ImageRef) -> Result<Embedding, GatewayError> {
        self.require(EndpointKind::ImageEmbed)?;
        let bytes = image.bytes()?;
        let key = self.key(&json!({ "image_sha256": hex_digest(&bytes) }));
        if let Some(v) = self.cached(&key) {
            return self.parse_vector(&v);
        }
        let b64 = base64::engine::general_purpose::STANDARD.encode(&bytes);
        let resp = self.send(&json!({ "model": self.endpoint.model_id, "image_b64": b64 }))?;
        let emb = self.parse_vector(
            resp.get("vector")
                .ok_or_else(|| GatewayError::Protocol("response lacks 'vector'".into()))?,
        )?;
        self.cache.put(key, json!(emb.values()));
        Ok(emb)
    }

    /// One finite score per candidate, in candidate order.
    pub fn rerank(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, GatewayError> {
        self.require(EndpointKind::Rerank)?;
        let keys: Vec<String> = candidates
            .iter()
            .map(|c| self.key(&json!({ "query": query, "candidate": c })))
            .collect();
        let mut scores: HashMap<&str, f64> = HashMap::new();
        let mut pending: HashSet<&str> = HashSet::new();
        let mut misses: Vec<usize> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            if scores.contains_key(key.as_str()) || !pending.insert(key.as_str()) {
                continue;
            }
            match self.cached(key).and_then(|v| v.as_f64()) {
                Some(s) => {
                    scores.insert(key, s);
                }
                None => misses.push(i),
            }
        }

        for batch in misses.chunks(self.endpoint.max_batch) {
            let batch_cands: Vec<&str> = batch.iter().map(|&i| candidates[i].as_str()).collect();
            let resp = self.send(&json!({
                "model": self.endpoint.model_id,
                "query": query,
                "candidates": batch_cands,
            }))?;
            let got: Vec<f64> = resp
                .get("scores")
                .map(|v| serde_json::from_value(v.clone()))
                .transpose()
                .map_err(|e| GatewayError::Protocol(format!("bad scores: {e}")))?
                .ok_or_else(|| GatewayError::Protocol("response lacks 'scores'".into()))?;
            if got.len() != batch.len() {
                return Err(GatewayError::Protocol(format!(
                    "sent {} candidates, received {} scores",
                    batch.len(),
                    got.len()
                )));
            }
            for (&i, s) in batch.iter().zip(got) {
                if !s.is_finite() {
                    return Err(GatewayError::Protocol("non-finite rerank score".into()));
                }
                self.cache.put(keys[i].clone(), json!(s));
                scores.insert(&keys[i], s);
            }
        }

        Ok(keys.iter().map(|k| scores[k.as_str()]).collect())
    }

    /// Returns the model text verbatim. Temperature-0 requests are cached.
    pub fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        self.require(EndpointKind::Generate)?;
        let images: Vec<Arc<[u8]>> = request
            .image_refs
            .iter()
            .map(ImageRef::bytes)
            .collect::<Result<_, _>>()?;
        let deterministic = request.temperature == 0.0;
        let key = self.key(&json!({
            "prompt": request.prompt_text,
            "images_sha256": images.iter().map(|b| hex_digest(b)).collect::<Vec<_>>(),
            "temperature": request.temperature,
        }));
        if deterministic {
            if let Some(text) = self.cached(&key).and_then(|v| v.as_str().map(str::to_string)) {
                return Ok(text);
            }
        }
        let images_b64: Vec<String> = images
            .iter()
            .map(|b| base64::engine::general_purpose::STANDARD.encode(b))
            .collect();
        let resp = self.send(&json!({
            "model": self.endpoint.model_id,
            "prompt": request.prompt_text,
            "images_b64": images_b64,
            "temperature": request.temperature,
        }))?;
        let text = resp
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Protocol("response lacks 'text'".into()))?
            .to_string();
        if deterministic {
            self.cache.put(key, json!(text));
        }
        Ok(text)
    }
}

fn mock_backend(kind: EndpointKind, target: &str) -> Result<Arc<dyn Backend>, GatewayError> {
    let (name, query) = target.split_once('?').unwrap_or((target, ""));
    let params: HashMap<&str, &str> = query
        .split('&')
        .filter(|p| !p.is_empty())
        .filter_map(|p| p.split_once('='))
        .collect();
    let dims = match params.get("dims") {
        Some(d) => d
            .parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| GatewayError::Config(format!("bad dims '{d}'")))?,
        None => mock::DEFAULT_MOCK_DIMS,
    };
    let backend: Arc<dyn Backend> = match (name, kind) {
        ("hash", EndpointKind::TextEmbed) => Arc::new(mock::HashTextEmbedder { dims }),
        ("hash", EndpointKind::ImageEmbed) => Arc::new(mock::HashImageEmbedder { dims }),
        ("overlap", EndpointKind::Rerank) => Arc::new(mock::OverlapReranker),
        ("constant", EndpointKind::Rerank) => {
            let score = params
                .get("score")
                .map(|s| s.parse::<f64>())
                .transpose()
                .map_err(|e| GatewayError::Config(format!("bad score: {e}")))?
                .unwrap_or(0.0);
            Arc::new(mock::ConstantReranker { score })
        }
        ("scripted", EndpointKind::Generate) => {
            let path = params
                .get("path")
                .ok_or_else(|| GatewayError::Config("mock://scripted needs ?path=".into()))?;
            Arc::new(mock::ScriptedGenerator::load(std::path::Path::new(path)).map_err(GatewayError::Config)?)
        }
        _ => {
            return Err(GatewayError::Config(format!(
                "no mock '{name}' for {kind} endpoints"
            )))
        }
    };
    Ok(backend)
}
