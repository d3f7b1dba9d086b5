use serde::{Deserialize, Serialize};

use super::{RetrievalError, ScoredHit};

/// Ratio-to-top truncation of a ranked report list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParams {
    pub tau: f64,
    pub k_max: usize,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self { tau: 0.8, k_max: 3 }
    }
}

/// Keeps the longest prefix whose scores stay within `tau` of the top
/// score (`score_i / score_1 >= tau`), capped at `k_max`. A non-positive
/// top score keeps the top hit alone. `hits` must be sorted descending.
pub fn adaptive_select_reports(
    hits: &[ScoredHit],
    params: AdaptiveParams,
) -> Result<Vec<ScoredHit>, RetrievalError> {
    if !(params.tau > 0.0 && params.tau <= 1.0) {
        return Err(RetrievalError::InvalidParameter(format!("tau {} outside (0, 1]", params.tau)));
    }
    let Some(top) = hits.first() else {
        return Ok(Vec::new());
    };
    if params.k_max == 0 {
        return Ok(Vec::new());
    }
    if top.score <= 0.0 {
        return Ok(vec![top.clone()]);
    }
    Ok(hits
        .iter()
        .take(params.k_max)
        .take_while(|h| h.score / top.score >= params.tau)
        .cloned()
        .collect())
}
