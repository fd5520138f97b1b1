use std::cmp::Ordering;

use super::query::CompositionalQuery;

/// Keeps queries with `score ≥ eps`, preserving order.
pub fn filter_queries(queries: Vec<CompositionalQuery>, eps: f64) -> Vec<CompositionalQuery> {
    queries.into_iter().filter(|q| q.score >= eps).collect()
}

/// Visiting order for greedy suppression: descending score, then ascending
/// anchor index.
pub(crate) fn nms_order(scores: &[(f64, usize)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .0
            .partial_cmp(&scores[a].0)
            .unwrap_or(Ordering::Equal)
            .then(scores[a].1.cmp(&scores[b].1))
    });
    idx
}

/// Greedy non-maximum suppression on pose centers.
pub fn nms(queries: Vec<CompositionalQuery>, radius_mm: f64) -> Vec<CompositionalQuery> {
    let keys: Vec<(f64, usize)> = queries.iter().map(|q| (q.score, q.anchor_index)).collect();
    let centers: Vec<_> = queries.iter().map(|q| q.center()).collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in nms_order(&keys) {
        if kept
            .iter()
            .all(|&k| (centers[k] - centers[i]).norm() > radius_mm)
        {
            kept.push(i);
        }
    }
    let mut slots: Vec<Option<CompositionalQuery>> = queries.into_iter().map(Some).collect();
    kept.into_iter()
        .map(|i| slots[i].take().expect("kept once"))
        .collect()
}
