use serde::{Deserialize, Serialize};

use crate::corpus::CorpusId;

/// A query addressed to one corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusQuery {
    Text(String),
    Graph { term: String, relation: String },
}

impl CorpusQuery {
    /// Grammar form: the text itself, or `term , relation`.
    pub fn render(&self) -> String {
        match self {
            CorpusQuery::Text(t) => t.clone(),
            CorpusQuery::Graph { term, relation } => format!("{term} , {relation}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEntry {
    pub corpus: CorpusId,
    /// 1-based position within its corpus.
    pub j: usize,
    pub query: CorpusQuery,
}

/// Queries grouped by corpus in canonical corpus order, `j` contiguous
/// from 1 within each corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    entries: Vec<QueryEntry>,
}

impl QuerySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends with the next `j` for that corpus. Entries are kept sorted
    /// by corpus.
    pub fn push(&mut self, corpus: CorpusId, query: CorpusQuery) {
        let j = self.entries.iter().filter(|e| e.corpus == corpus).count() + 1;
        let at = self.entries.partition_point(|e| e.corpus <= corpus);
        self.entries.insert(at, QueryEntry { corpus, j, query });
    }

    pub fn entries(&self) -> &[QueryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_corpus(&self, corpus: CorpusId) -> impl Iterator<Item = &QueryEntry> {
        self.entries.iter().filter(move |e| e.corpus == corpus)
    }

    /// One tag per corpus, queries joined by ` ; `, corpora on separate
    /// lines. Corpora without queries get an empty tag.
    pub fn serialize(&self) -> String {
        CorpusId::ALL
            .iter()
            .map(|&c| {
                let body: Vec<String> = self.for_corpus(c).map(|e| e.query.render()).collect();
                format!("<{c}>{}</{c}>", body.join(" ; "))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// Answer-time generator output.
    Execution,
    /// Expert exploration output.
    Exploration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseLimits {
    /// Execution mode: total across the four unstructured corpora.
    pub max_unstructured: usize,
    /// Execution mode: graph queries kept.
    pub max_graph: usize,
    /// Exploration mode: per corpus.
    pub max_per_corpus: usize,
}

impl Default for ParseLimits {
    fn default() -> Self {
        Self { max_unstructured: 4, max_graph: 1, max_per_corpus: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseDiagnostic {
    /// No complete `<tag>...</tag>` pair for the corpus.
    MissingTag { corpus: CorpusId },
    /// Graph query without a comma or with an empty term.
    MalformedGraph { raw: String },
    /// Well-formed query dropped by a cap.
    Overflow { corpus: CorpusId, query: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutcome {
    pub queries: QuerySet,
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl ParseOutcome {
    /// True when none of the five tags was found.
    pub fn no_tags(&self) -> bool {
        self.diagnostics
            .iter()
            .filter(|d| matches!(d, ParseDiagnostic::MissingTag { .. }))
            .count()
            == CorpusId::ALL.len()
    }
}

pub fn parse_query_output(raw: &str, mode: ParseMode) -> ParseOutcome {
    parse_query_output_with(raw, mode, ParseLimits::default())
}

/// Never fails: anything that is not a usable query becomes a diagnostic.
/// Tag names match ASCII case-insensitively and the first complete pair
/// for each corpus wins. Contents split on `;`; graph queries split on
/// their first `,`.
pub fn parse_query_output_with(raw: &str, mode: ParseMode, limits: ParseLimits) -> ParseOutcome {
    let mut out = ParseOutcome::default();
    let mut unstructured_kept = 0usize;
    for corpus in CorpusId::ALL {
        let Some(content) = tag_content(raw, corpus.as_str()) else {
            out.diagnostics.push(ParseDiagnostic::MissingTag { corpus });
            continue;
        };
        let mut kept_here = 0usize;
        for piece in content.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let query = if corpus.is_structured() {
                match piece.split_once(',') {
                    Some((term, relation)) if !term.trim().is_empty() => CorpusQuery::Graph {
                        term: term.trim().to_string(),
                        relation: relation.trim().to_string(),
                    },
                    _ => {
                        out.diagnostics.push(ParseDiagnostic::MalformedGraph { raw: piece.to_string() });
                        continue;
                    }
                }
            } else {
                CorpusQuery::Text(piece.to_string())
            };
            let allowed = match mode {
                ParseMode::Exploration => kept_here < limits.max_per_corpus,
                ParseMode::Execution if corpus.is_structured() => kept_here < limits.max_graph,
                ParseMode::Execution => unstructured_kept < limits.max_unstructured,
            };
            if !allowed {
                out.diagnostics.push(ParseDiagnostic::Overflow { corpus, query: query.render() });
                continue;
            }
            kept_here += 1;
            if !corpus.is_structured() {
                unstructured_kept += 1;
            }
            out.queries.push(corpus, query);
        }
    }
    out
}

fn tag_content<'a>(raw: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let start = find_ascii_ci(raw, &open)? + open.len();
    let len = find_ascii_ci(&raw[start..], &close)?;
    Some(&raw[start..start + len])
}

fn find_ascii_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}
