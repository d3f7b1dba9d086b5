use std::cmp::Ordering;

use super::{RetrievalError, ScoredHit};
use crate::gateway::Gateway;

/// Rescores `hits` with the reranker and keeps the best `m`, ordered by
/// reranker score with ties going to the better original rank. `texts[i]`
/// is the passage for `hits[i]`; `m` larger than `hits` keeps everything.
pub fn rerank_topk(
    query: &str,
    hits: &[ScoredHit],
    texts: &[String],
    m: usize,
    reranker: &Gateway,
) -> Result<Vec<ScoredHit>, RetrievalError> {
    if hits.len() != texts.len() {
        return Err(RetrievalError::InvalidParameter(format!(
            "{} hits but {} texts",
            hits.len(),
            texts.len()
        )));
    }
    if m == 0 || hits.is_empty() {
        return Ok(Vec::new());
    }
    let scores = reranker.rerank(query, texts)?;
    let mut order: Vec<usize> = (0..hits.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(hits[a].rank.cmp(&hits[b].rank))
    });
    Ok(order
        .into_iter()
        .take(m)
        .enumerate()
        .map(|(r, i)| ScoredHit {
            item_id: hits[i].item_id.clone(),
            score: scores[i],
            rank: r + 1,
        })
        .collect())
}
