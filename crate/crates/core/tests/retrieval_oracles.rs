use polysource_core::retrieval::{adaptive_select_reports, rrf_fuse, AdaptiveParams, DenseIndex, ScoredHit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full scan on raw (unnormalized) rows: cosine = dot / (|a||b|), sorted
/// by score then id.
fn full_scan(rows: &[(String, Vec<f64>)], q: &[f64], k: usize) -> Vec<(String, f64)> {
    let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut all: Vec<(String, f64)> = rows
        .iter()
        .map(|(id, v)| {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (id.clone(), dot / (nv * nq))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn knn_matches_full_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<(String, Vec<f64>)> = (0..1000)
        .map(|i| (format!("v{i:04}"), (0..100).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let index = DenseIndex::build("m", 100, rows.clone()).unwrap();
    for _ in 0..50 {
        let q: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = index.knn_search(&q, 10).unwrap();
        let want = full_scan(&rows, &q, 10);
        assert_eq!(got.len(), 10);
        for (i, (h, (id, s))) in got.iter().zip(&want).enumerate() {
            assert_eq!(&h.item_id, id);
            assert_eq!(h.rank, i + 1);
            assert!((h.score - s).abs() < 1e-9);
        }
    }
}

#[test]
fn rrf_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lists: Vec<Vec<String>> = (0..3)
        .map(|_| {
            let mut ids: Vec<String> = (0..40).map(|i| format!("d{i:02}")).collect();
            for i in (1..ids.len()).rev() {
                ids.swap(i, rng.random_range(0..=i));
            }
            ids.truncate(20);
            ids
        })
        .collect();
    let fused = rrf_fuse(&lists, 60);
    let mut want: Vec<(String, f64)> = Vec::new();
    for id in lists.iter().flatten() {
        if want.iter().any(|(w, _)| w == id) {
            continue;
        }
        let s: f64 = lists
            .iter()
            .filter_map(|l| l.iter().position(|x| x == id))
            .map(|p| 1.0 / (60.0 + p as f64 + 1.0))
            .sum();
        want.push((id.clone(), s));
    }
    want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let got: Vec<(String, f64)> = fused.into_iter().map(|h| (h.item_id, h.score)).collect();
    assert_eq!(got, want);
}

#[test]
fn adaptive_matches_prefix_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let n = rng.random_range(0..12);
        let mut scores: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..1.0)).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let hits: Vec<ScoredHit> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoredHit { item_id: format!("r{i}"), score: s, rank: i + 1 })
            .collect();
        let tau = rng.random_range(0.05..=1.0);
        let k_max = rng.random_range(1..5);
        let got = adaptive_select_reports(&hits, AdaptiveParams { tau, k_max }).unwrap().len();

        let mut want = 0;
        if n > 0 {
            if scores[0] <= 0.0 {
                want = 1;
            } else {
                while want < n && want < k_max && scores[want] / scores[0] >= tau {
                    want += 1;
                }
            }
        }
        assert_eq!(got, want, "scores={scores:?} tau={tau} k_max={k_max}");
    }
}
