use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::text::normalize_surface;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphTerm {
    pub term_id: String,
    pub surface: String,
    #[serde(default)]
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphRelation {
    pub head: String,
    pub relation_type: String,
    pub tail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub terms: usize,
    pub relations: usize,
    pub rejected: usize,
    /// Records identical to ones already stored; re-ingestion is a no-op.
    pub unchanged: usize,
    pub rejections: Vec<String>,
}

/// One-hop neighbourhood entry with both endpoints resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<'a> {
    pub head: &'a GraphTerm,
    pub relation_type: &'a str,
    pub tail: &'a GraphTerm,
}

impl Neighbor<'_> {
    pub fn render(&self) -> String {
        format!("{} {} {}", self.head.surface, self.relation_type, self.tail.surface)
    }
}

/// Terms indexed by id and by normalized surface, with per-term adjacency
/// over relations in either direction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphStore {
    terms: Vec<GraphTerm>,
    relations: Vec<GraphRelation>,
    by_id: HashMap<String, usize>,
    by_surface: HashMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
    seen_relations: HashSet<GraphRelation>,
}

impl GraphStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest(
        &mut self,
        terms: impl IntoIterator<Item = GraphTerm>,
        relations: impl IntoIterator<Item = GraphRelation>,
    ) -> IngestStats {
        let mut stats = IngestStats::default();
        for term in terms {
            self.add_term(term, &mut stats);
        }
        for rel in relations {
            self.add_relation(rel, &mut stats);
        }
        stats
    }

    fn reject(stats: &mut IngestStats, reason: String) {
        stats.rejected += 1;
        stats.rejections.push(reason);
    }

    fn add_term(&mut self, term: GraphTerm, stats: &mut IngestStats) {
        let key = normalize_surface(&term.surface);
        if key.is_empty() || term.term_id.is_empty() {
            return Self::reject(stats, format!("term '{}': empty id or surface", term.term_id));
        }
        if let Some(&idx) = self.by_id.get(&term.term_id) {
            let existing = &self.terms[idx];
            if normalize_surface(&existing.surface) == key && existing.definition == term.definition {
                stats.unchanged += 1;
            } else {
                Self::reject(stats, format!("term '{}': conflicting redefinition", term.term_id));
            }
            return;
        }
        if let Some(&idx) = self.by_surface.get(&key) {
            let owner = &self.terms[idx].term_id;
            return Self::reject(
                stats,
                format!("term '{}': duplicate surface '{key}' (held by '{owner}')", term.term_id),
            );
        }
        let idx = self.terms.len();
        self.by_id.insert(term.term_id.clone(), idx);
        self.by_surface.insert(key, idx);
        self.terms.push(term);
        self.adjacency.push(Vec::new());
        stats.terms += 1;
    }

    fn add_relation(&mut self, rel: GraphRelation, stats: &mut IngestStats) {
        let (Some(&h), Some(&t)) = (self.by_id.get(&rel.head), self.by_id.get(&rel.tail)) else {
            return Self::reject(
                stats,
                format!("relation {} -[{}]-> {}: dangling endpoint", rel.head, rel.relation_type, rel.tail),
            );
        };
        if self.seen_relations.contains(&rel) {
            stats.unchanged += 1;
            return;
        }
        let idx = self.relations.len();
        self.adjacency[h].push(idx);
        if t != h {
            self.adjacency[t].push(idx);
        }
        self.seen_relations.insert(rel.clone());
        self.relations.push(rel);
        stats.relations += 1;
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn terms(&self) -> &[GraphTerm] {
        &self.terms
    }

    pub fn relations(&self) -> &[GraphRelation] {
        &self.relations
    }

    pub fn term(&self, term_id: &str) -> Option<&GraphTerm> {
        self.by_id.get(term_id).map(|&i| &self.terms[i])
    }

    /// Exact match on the normalized surface form.
    pub fn lookup(&self, surface: &str) -> Option<&GraphTerm> {
        self.by_surface.get(&normalize_surface(surface)).map(|&i| &self.terms[i])
    }

    /// Relations touching `term_id`, in ingestion order.
    pub fn neighbors(&self, term_id: &str) -> Vec<Neighbor<'_>> {
        let Some(&idx) = self.by_id.get(term_id) else {
            return Vec::new();
        };
        self.adjacency[idx]
            .iter()
            .map(|&r| {
                let rel = &self.relations[r];
                Neighbor {
                    head: &self.terms[self.by_id[&rel.head]],
                    relation_type: &rel.relation_type,
                    tail: &self.terms[self.by_id[&rel.tail]],
                }
            })
            .collect()
    }
}
