//! Per-question retrieval shared by the `retrieve` subcommand and the
//! HTTP service.

use std::sync::Arc;

use polysource_core::corpus::Modality;
use polysource_core::gateway::{Gateway, GenerationRequest, ImageRef, ResponseCache};
use polysource_core::prompts::render_query_generation_prompt;
use polysource_core::query::{
    parse_query_output_with, retrieve_reports, ExecDiagnostic, ExecOutcome, KnowledgeBase, ParseDiagnostic,
    ParseLimits, ParseMode, QueryEngine, QuerySet, RetrievalParams, RetrievedReport,
};
use serde::Serialize;

use crate::config::Role;
use crate::{CliError, Loaded};

pub struct Retriever {
    pub kb: KnowledgeBase,
    text_embedder: Gateway,
    reranker: Gateway,
    image_embedder: Option<Gateway>,
    generator: Option<Gateway>,
    params: RetrievalParams,
    limits: ParseLimits,
}

/// Parse and execution diagnostics in one stream.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Diagnostic {
    Parse(ParseDiagnostic),
    Exec(ExecDiagnostic),
    Reports { kind: &'static str, message: String },
}

pub struct Retrieved {
    pub query_set: QuerySet,
    pub reports: Vec<RetrievedReport>,
    pub outcome: ExecOutcome,
    pub diagnostics: Vec<Diagnostic>,
}

impl Retriever {
    /// The generator is only connected when `with_generator` is set; the
    /// image embedder only when a report index exists.
    pub fn open(
        loaded: &Loaded,
        kb: KnowledgeBase,
        cache: &Arc<ResponseCache>,
        with_generator: bool,
    ) -> Result<Self, CliError> {
        let cfg = &loaded.config;
        let image_embedder = match kb.reports {
            Some(_) => Some(loaded.gateway(Role::ImageEmbed, cache)?),
            None => None,
        };
        let generator = if with_generator { Some(loaded.gateway(Role::QueryGenerator, cache)?) } else { None };
        let r = Self {
            text_embedder: loaded.gateway(Role::TextEmbed, cache)?,
            reranker: loaded.gateway(Role::Rerank, cache)?,
            image_embedder,
            generator,
            params: cfg.retrieval_params(),
            limits: ParseLimits {
                max_unstructured: cfg.max_unstructured_queries,
                max_graph: cfg.max_graph_queries,
                max_per_corpus: cfg.queries_per_corpus,
            },
            kb,
        };
        r.engine()?;
        Ok(r)
    }

    pub fn has_generator(&self) -> bool {
        self.generator.is_some()
    }

    fn engine(&self) -> Result<QueryEngine<'_>, CliError> {
        QueryEngine::new(&self.kb, &self.text_embedder, &self.reranker, self.params)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn parse(&self, raw: &str) -> (QuerySet, Vec<Diagnostic>) {
        let parsed = parse_query_output_with(raw, ParseMode::Execution, self.limits);
        (parsed.queries, parsed.diagnostics.into_iter().map(Diagnostic::Parse).collect())
    }

    /// Asks the query generator for a query set.
    pub fn generate_queries(
        &self,
        question: &str,
        image: Option<&ImageRef>,
    ) -> Result<(QuerySet, Vec<Diagnostic>), String> {
        let generator = self.generator.as_ref().ok_or("no query generator configured")?;
        let prompt = render_query_generation_prompt(question);
        let raw = generator
            .generate(&GenerationRequest::new(prompt, image.into_iter().cloned().collect()))
            .map_err(|e| format!("query generation: {e}"))?;
        Ok(self.parse(&raw))
    }

    /// Runs `query_set` and, when a modality is given and reports are
    /// indexed, report retrieval. Report failures become a diagnostic.
    pub fn run(
        &self,
        query_set: QuerySet,
        mut diagnostics: Vec<Diagnostic>,
        image: Option<&ImageRef>,
        modality: Option<Modality>,
    ) -> Result<Retrieved, CliError> {
        let outcome = self.engine()?.execute_queries(&query_set);
        let mut reports = Vec::new();
        if let (Some(image), Some(m), Some(index), Some(embedder)) =
            (image, modality, &self.kb.reports, &self.image_embedder)
        {
            match retrieve_reports(image, m, index, embedder, self.params.adaptive) {
                Ok(r) => reports = r,
                Err(e) => diagnostics.push(Diagnostic::Reports { kind: "report_retrieval_failed", message: e.to_string() }),
            }
        }
        diagnostics.extend(outcome.diagnostics.iter().cloned().map(Diagnostic::Exec));
        Ok(Retrieved { query_set, reports, outcome, diagnostics })
    }
}
