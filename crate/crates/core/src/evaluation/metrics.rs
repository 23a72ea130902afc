//! Scalar metrics: ROC-AUC, Recall@K, alignment error, relative degradation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use ndarray::Array2;

use crate::encoder::{EmbeddingTable, NodeId};
use crate::error::{Error, Result};

/// ROC-AUC from midranks; tied scores count one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("roc_auc labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("roc_auc scores".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateMetric(format!(
            "ROC-AUC needs both classes ({positives} positive, {negatives} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives keeps every midrank integral.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based: start+1..=end), midrank (start+1+end)/2.
        let twice_mid = (start + 1 + end) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        twice_rank_sum += twice_mid * pos_in_group;
        start = end;
    }
    let p = positives as u64;
    // Twice the number of (positive, negative) wins, ties counted 1/2 each.
    let twice_wins = twice_rank_sum - p * (p + 1);
    Ok(twice_wins as f64 / (2 * p * negatives as u64) as f64)
}

/// Per-user top-`k_cut` recall, averaged over users with at least one
/// relevant item.
///
/// `eval_edges` are held-out `(user, item)` pairs; `seen` holds each user's
/// training-time pairs, which are removed from both the relevant set and
/// the ranking. Candidates are scored by dot product and ties go to the
/// smaller item id.
pub fn recall_at_k(
    table: &EmbeddingTable,
    eval_edges: &[(u32, u32)],
    k_cut: usize,
    candidate_items: &[u32],
    seen: &HashSet<(u32, u32)>,
) -> Result<f64> {
    if candidate_items.is_empty() {
        return Err(Error::Validation("empty candidate item set".into()));
    }
    let mut relevant: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for &(u, i) in eval_edges {
        if !seen.contains(&(u, i)) {
            relevant.entry(u).or_default().insert(i);
        }
    }
    if relevant.is_empty() {
        return Err(Error::Validation("no evaluation edges".into()));
    }
    let mut candidates: Vec<u32> = candidate_items.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    let mut item_matrix = Array2::zeros((candidates.len(), table.dim()));
    for (r, &i) in candidates.iter().enumerate() {
        item_matrix.row_mut(r).assign(&table.vector(NodeId::Item(i))?);
    }

    let mut total = 0.0;
    for (&u, rel) in &relevant {
        let scores = item_matrix.dot(&table.vector(NodeId::User(u))?);
        let mut ranked: Vec<usize> = (0..candidates.len())
            .filter(|&r| !seen.contains(&(u, candidates[r])))
            .collect();
        let by_score = |a: &usize, b: &usize| -> Ordering { scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)) };
        if ranked.len() > k_cut {
            ranked.select_nth_unstable_by(k_cut, by_score);
            ranked.truncate(k_cut);
        }
        let hits = ranked.iter().filter(|&&r| rel.contains(&candidates[r])).count();
        total += hits as f64 / rel.len() as f64;
    }
    Ok(total / relevant.len() as f64)
}

/// Mean Euclidean distance between `compat` and `reference` over `nodes`.
pub fn alignment_error(compat: &EmbeddingTable, reference: &EmbeddingTable, nodes: &[NodeId]) -> Result<f64> {
    if compat.dim() != reference.dim() {
        return Err(Error::shape("alignment error tables", reference.dim(), compat.dim()));
    }
    if nodes.is_empty() {
        return Err(Error::Validation("empty node set for alignment error".into()));
    }
    let mut total = 0.0;
    for &n in nodes {
        let d = &compat.vector(n)? - &reference.vector(n)?;
        total += d.dot(&d).sqrt();
    }
    Ok(total / nodes.len() as f64)
}

/// `100 · (perf − baseline) / baseline`.
pub fn relative_degradation(perf: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 || !baseline.is_finite() || !perf.is_finite() {
        return Err(Error::Arithmetic(format!(
            "relative degradation of {perf} against baseline {baseline}"
        )));
    }
    Ok(100.0 * (perf - baseline) / baseline)
}
