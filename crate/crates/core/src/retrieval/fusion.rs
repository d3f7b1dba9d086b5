use std::cmp::Ordering;
use std::collections::HashMap;

use super::ScoredHit;

pub const DEFAULT_RRF_K0: u32 = 60;

/// Reciprocal rank fusion: `score(d) = sum over lists of 1 / (k0 + rank_d)`
/// with 1-based ranks. Output is sorted by score, ties by ascending id. If
/// an id repeats within one list only its first position counts.
pub fn rrf_fuse(lists: &[Vec<String>], k0: u32) -> Vec<ScoredHit> {
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for list in lists {
        let mut seen = std::collections::HashSet::new();
        for (pos, id) in list.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                continue;
            }
            *scores.entry(id.as_str()).or_default() += 1.0 / (k0 as f64 + (pos + 1) as f64);
        }
    }
    let mut fused: Vec<(&str, f64)> = scores.into_iter().collect();
    fused.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(b.0)));
    fused
        .into_iter()
        .enumerate()
        .map(|(r, (id, score))| ScoredHit {
            item_id: id.to_string(),
            score,
            rank: r + 1,
        })
        .collect()
}
