//! Flat TOML configuration with `key=value` overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use polysource_core::corpus::ChunkParams;
use polysource_core::eval::{CorrectnessConfig, TextMetric};
use polysource_core::gateway::{EndpointKind, Gateway, ModelEndpoint, ResponseCache};
use polysource_core::query::RetrievalParams;
use polysource_core::retrieval::AdaptiveParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Every key is optional in the file; see the README for the full table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus_dir: PathBuf,
    pub store_dir: PathBuf,
    pub index_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Unset means responses are cached for the current process only.
    pub cache_dir: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    /// Retrieved context per sample; `build-pairs` falls back to
    /// `<out_dir>/bundles.jsonl`.
    pub bundles: Option<PathBuf>,

    pub text_embed_url: Option<String>,
    pub text_embed_model: String,
    pub image_embed_url: Option<String>,
    pub image_embed_model: String,
    pub rerank_url: Option<String>,
    pub rerank_model: String,
    pub query_generator_url: Option<String>,
    pub query_generator_model: String,
    pub expert_url: Option<String>,
    pub expert_model: String,
    pub judge_url: Option<String>,
    pub judge_model: String,
    pub answerer_url: Option<String>,
    pub answerer_model: String,

    pub request_timeout_secs: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub max_batch: usize,
    pub max_in_flight: usize,

    pub chunk_max_len: usize,
    pub chunk_overlap: usize,
    pub dedup_threshold: u32,

    pub tau: f64,
    pub k_max: usize,
    pub top_n: usize,
    pub top_m: usize,
    pub max_unstructured_queries: usize,
    pub max_graph_queries: usize,
    pub graph_top_relations: usize,

    pub queries_per_corpus: usize,
    /// Per-corpus cap on training queries; required by `build-mqg-data`.
    pub n_q: Option<usize>,

    pub alpha_r: f64,
    pub metrics: Vec<TextMetric>,
    pub workers: usize,

    pub eval_predictions: Option<PathBuf>,
    pub eval_run_matrix: Option<PathBuf>,
    pub eval_retrieval: Option<PathBuf>,
    pub eval_judgements: Option<PathBuf>,
    pub recall_ks: Vec<usize>,

    pub bind: String,
    pub max_concurrent_requests: usize,
}

impl Default for Config {
    fn default() -> Self {
        let retrieval = RetrievalParams::default();
        let chunk = ChunkParams::default();
        Self {
            corpus_dir: "corpora".into(),
            store_dir: "stores".into(),
            index_dir: "indices".into(),
            out_dir: "out".into(),
            cache_dir: None,
            samples: None,
            bundles: None,
            text_embed_url: None,
            text_embed_model: "text-embed".into(),
            image_embed_url: None,
            image_embed_model: "image-embed".into(),
            rerank_url: None,
            rerank_model: "rerank".into(),
            query_generator_url: None,
            query_generator_model: "query-generator".into(),
            expert_url: None,
            expert_model: "expert".into(),
            judge_url: None,
            judge_model: "judge".into(),
            answerer_url: None,
            answerer_model: "answerer".into(),
            request_timeout_secs: 60,
            max_retries: 2,
            retry_backoff_ms: 250,
            max_batch: 32,
            max_in_flight: 8,
            chunk_max_len: chunk.max_len,
            chunk_overlap: chunk.overlap,
            dedup_threshold: 2,
            tau: retrieval.adaptive.tau,
            k_max: retrieval.adaptive.k_max,
            top_n: retrieval.top_n,
            top_m: retrieval.top_m,
            max_unstructured_queries: retrieval.max_unstructured_queries,
            max_graph_queries: retrieval.max_graph_queries,
            graph_top_relations: retrieval.graph_top_relations,
            queries_per_corpus: 6,
            n_q: None,
            alpha_r: 0.5,
            metrics: vec![TextMetric::Bleu, TextMetric::RougeL],
            workers: 4,
            eval_predictions: None,
            eval_run_matrix: None,
            eval_retrieval: None,
            eval_judgements: None,
            recall_ks: vec![1, 5, 10],
            bind: "127.0.0.1:8088".into(),
            max_concurrent_requests: 16,
        }
    }
}

/// Model roles a subcommand can ask for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    TextEmbed,
    ImageEmbed,
    Rerank,
    QueryGenerator,
    Expert,
    Judge,
    Answerer,
}

impl Role {
    fn key(self) -> &'static str {
        match self {
            Role::TextEmbed => "text_embed",
            Role::ImageEmbed => "image_embed",
            Role::Rerank => "rerank",
            Role::QueryGenerator => "query_generator",
            Role::Expert => "expert",
            Role::Judge => "judge",
            Role::Answerer => "answerer",
        }
    }

    fn kind(self) -> EndpointKind {
        match self {
            Role::TextEmbed => EndpointKind::TextEmbed,
            Role::ImageEmbed => EndpointKind::ImageEmbed,
            Role::Rerank => EndpointKind::Rerank,
            _ => EndpointKind::Generate,
        }
    }
}

/// A validated configuration plus the directory its relative paths are
/// resolved against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub base: PathBuf,
    pub hash: String,
}

fn parse_override(raw: &str) -> Result<(String, toml::Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{raw}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override '{raw}' has an empty key")));
    }
    // TOML literal when it parses as one, plain string otherwise
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

impl Loaded {
    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        Self::from_str(&text, base, overrides)
    }

    pub fn from_str(text: &str, base: PathBuf, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config is not valid TOML: {e}")))?;
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            table.insert(k, v);
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        config.validate()?;
        let canonical = serde_json::to_string(&config).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self { config, base, hash })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.path(&self.config.corpus_dir)
    }

    pub fn store_dir(&self) -> PathBuf {
        self.path(&self.config.store_dir)
    }

    pub fn index_dir(&self) -> PathBuf {
        self.path(&self.config.index_dir)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path(&self.config.out_dir)
    }

    /// Fails with a config error when the key is unset or the file is gone.
    pub fn existing(&self, key: &str, value: Option<&PathBuf>) -> Result<PathBuf, CliError> {
        let p = value.ok_or_else(|| CliError::Config(format!("'{key}' must be set")))?;
        let full = self.path(p);
        if !full.exists() {
            return Err(CliError::Config(format!("'{key}' points to missing path {}", full.display())));
        }
        Ok(full)
    }

    pub fn cache(&self) -> Result<Arc<ResponseCache>, CliError> {
        Ok(Arc::new(match &self.config.cache_dir {
            Some(dir) => ResponseCache::open(&self.path(dir))
                .map_err(|e| CliError::Pipeline(format!("cannot open cache: {e}")))?,
            None => ResponseCache::in_memory(),
        }))
    }

    /// `mock://scripted?path=` is resolved against the config directory too.
    pub fn gateway(&self, role: Role, cache: &Arc<ResponseCache>) -> Result<Gateway, CliError> {
        let c = &self.config;
        let (url, model) = match role {
            Role::TextEmbed => (&c.text_embed_url, &c.text_embed_model),
            Role::ImageEmbed => (&c.image_embed_url, &c.image_embed_model),
            Role::Rerank => (&c.rerank_url, &c.rerank_model),
            Role::QueryGenerator => (&c.query_generator_url, &c.query_generator_model),
            Role::Expert => (&c.expert_url, &c.expert_model),
            Role::Judge => (&c.judge_url, &c.judge_model),
            Role::Answerer => (&c.answerer_url, &c.answerer_model),
        };
        let url = url
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("'{}_url' must be set", role.key())))?;
        let url = match url.split_once("path=") {
            Some((head, p)) if url.starts_with("mock://scripted") => {
                format!("{head}path={}", self.path(Path::new(p)).display())
            }
            _ => url.clone(),
        };
        let mut ep = ModelEndpoint::new(role.kind(), model.clone(), url);
        ep.timeout = Duration::from_secs(c.request_timeout_secs);
        ep.max_retries = c.max_retries;
        ep.backoff = Duration::from_millis(c.retry_backoff_ms);
        ep.max_batch = c.max_batch;
        ep.max_in_flight = c.max_in_flight;
        Gateway::connect(ep, cache.clone()).map_err(|e| CliError::Config(format!("{}: {e}", role.key())))
    }
}

impl Config {
    pub fn chunk_params(&self) -> ChunkParams {
        ChunkParams { max_len: self.chunk_max_len, overlap: self.chunk_overlap }
    }

    pub fn retrieval_params(&self) -> RetrievalParams {
        RetrievalParams {
            top_n: self.top_n,
            top_m: self.top_m,
            graph_top_relations: self.graph_top_relations,
            max_unstructured_queries: self.max_unstructured_queries,
            max_graph_queries: self.max_graph_queries,
            adaptive: AdaptiveParams { tau: self.tau, k_max: self.k_max },
        }
    }

    pub fn correctness(&self) -> CorrectnessConfig {
        CorrectnessConfig { alpha_r: self.alpha_r, metrics: self.metrics.clone() }
    }

    fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.chunk_max_len == 0 || self.chunk_overlap >= self.chunk_max_len {
            return fail(format!(
                "chunk_overlap ({}) must be below chunk_max_len ({})",
                self.chunk_overlap, self.chunk_max_len
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.alpha_r) {
            return fail(format!("alpha_r must be in [0, 1], got {}", self.alpha_r));
        }
        if self.dedup_threshold > 64 {
            return fail(format!("dedup_threshold must be at most 64, got {}", self.dedup_threshold));
        }
        for (name, v) in [
            ("k_max", self.k_max),
            ("top_n", self.top_n),
            ("top_m", self.top_m),
            ("graph_top_relations", self.graph_top_relations),
            ("queries_per_corpus", self.queries_per_corpus),
            ("workers", self.workers),
            ("max_batch", self.max_batch),
            ("max_in_flight", self.max_in_flight),
            ("max_concurrent_requests", self.max_concurrent_requests),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.top_m > self.top_n {
            return fail(format!("top_m ({}) cannot exceed top_n ({})", self.top_m, self.top_n));
        }
        if self.n_q == Some(0) {
            return fail("n_q must be at least 1".into());
        }
        if self.metrics.is_empty() {
            return fail("metrics must name at least one metric".into());
        }
        if self.recall_ks.contains(&0) {
            return fail("recall_ks entries must be at least 1".into());
        }
        Ok(())
    }
}
