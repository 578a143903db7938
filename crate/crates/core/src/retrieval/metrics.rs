use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RetrievalError, RetrievalSplit};
use crate::record::StyleLabel;
use crate::vector::{dot, l2_normalize, EmbeddingMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub query_id: u64,
    /// Gallery positions, best first.
    pub order: Vec<usize>,
    /// Similarity of each entry of `order`.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleMetrics {
    pub queries: usize,
    pub map_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    pub gallery: usize,
    pub map_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub per_style: BTreeMap<u32, StyleMetrics>,
    /// Queries whose label has no gallery item; not scored.
    pub excluded_queries: Vec<u64>,
}

fn by_score_then_id(a: (f64, u64), b: (f64, u64)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Ranks gallery rows by descending cosine similarity to `query`; equal
/// scores are ordered by ascending gallery id.
pub fn rank_gallery(
    query_id: u64,
    query: &[f64],
    gallery_ids: &[u64],
    gallery: &EmbeddingMatrix,
) -> Result<RankedResult, RetrievalError> {
    if query.len() != gallery.dim() {
        return Err(RetrievalError::DimensionMismatch {
            query: query.len(),
            gallery: gallery.dim(),
        });
    }
    if gallery_ids.len() != gallery.rows() {
        return Err(RetrievalError::LengthMismatch {
            items: gallery_ids.len(),
            labels: gallery.rows(),
        });
    }
    let mut q = query.to_vec();
    crate::vector::normalize_in_place(&mut q)?;
    let g = if gallery.is_normalized() {
        gallery.clone()
    } else {
        l2_normalize(gallery)?
    };
    let scores: Vec<f64> = g.iter_rows().map(|r| dot(&q, r)).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        by_score_then_id((scores[a], gallery_ids[a]), (scores[b], gallery_ids[b]))
    });
    Ok(RankedResult {
        query_id,
        scores: order.iter().map(|&i| scores[i]).collect(),
        order,
    })
}

/// AP@k with precision summed at each relevant rank and divided by
/// `min(k, relevant_total)`. `relevance` is the ranked list, best first.
pub fn average_precision_at_k(relevance: &[bool], relevant_total: usize, k: usize) -> f64 {
    let denom = k.min(relevant_total);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().take(k).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

fn hit_at_k(relevance: &[bool], k: usize) -> f64 {
    if relevance.iter().take(k).any(|&r| r) {
        1.0
    } else {
        0.0
    }
}

fn clamp_k(k: usize, gallery: usize) -> Result<usize, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if k > gallery {
        log::warn!("k = {k} exceeds gallery size {gallery}; clamped");
    }
    Ok(k.min(gallery))
}

struct Scored {
    relevance: Vec<bool>,
    relevant_total: usize,
}

fn scored_queries(
    ranked: &[RankedResult],
    query_labels: &[StyleLabel],
    gallery_labels: &[StyleLabel],
) -> Result<Vec<Scored>, RetrievalError> {
    if ranked.len() != query_labels.len() {
        return Err(RetrievalError::LengthMismatch {
            items: ranked.len(),
            labels: query_labels.len(),
        });
    }
    let mut totals: HashMap<u32, usize> = HashMap::new();
    for l in gallery_labels {
        *totals.entry(l.0).or_default() += 1;
    }
    let mut out = Vec::with_capacity(ranked.len());
    for (r, q) in ranked.iter().zip(query_labels) {
        let relevant_total = totals.get(&q.0).copied().unwrap_or(0);
        if relevant_total == 0 {
            log::warn!(
                "query {} has no same-label gallery item; excluded",
                r.query_id
            );
            continue;
        }
        let relevance = r.order.iter().map(|&g| gallery_labels[g] == *q).collect();
        out.push(Scored {
            relevance,
            relevant_total,
        });
    }
    if out.is_empty() {
        return Err(RetrievalError::NoQueries);
    }
    Ok(out)
}

/// Fraction of queries with a same-label item in the top `k`.
pub fn recall_at_k(
    ranked: &[RankedResult],
    query_labels: &[StyleLabel],
    gallery_labels: &[StyleLabel],
    k: usize,
) -> Result<f64, RetrievalError> {
    let k = clamp_k(k, gallery_labels.len())?;
    let scored = scored_queries(ranked, query_labels, gallery_labels)?;
    Ok(scored
        .iter()
        .map(|s| hit_at_k(&s.relevance, k))
        .sum::<f64>()
        / scored.len() as f64)
}

/// Mean of [`average_precision_at_k`] over queries.
pub fn map_at_k(
    ranked: &[RankedResult],
    query_labels: &[StyleLabel],
    gallery_labels: &[StyleLabel],
    k: usize,
) -> Result<f64, RetrievalError> {
    let k = clamp_k(k, gallery_labels.len())?;
    let scored = scored_queries(ranked, query_labels, gallery_labels)?;
    Ok(scored
        .iter()
        .map(|s| average_precision_at_k(&s.relevance, s.relevant_total, k))
        .sum::<f64>()
        / scored.len() as f64)
}

/// Scores every query of `split` at each k. Only the top `max(ks)` of each
/// ranking is materialized.
pub fn evaluate(
    split: &RetrievalSplit,
    embeddings: &EmbeddingMatrix,
    ks: &[usize],
) -> Result<MetricReport, RetrievalError> {
    split.validate()?;
    if split.gallery.is_empty() {
        return Err(RetrievalError::EmptyGallery);
    }
    let rows = embeddings.rows();
    for it in split.queries.iter().chain(&split.gallery) {
        if it.row >= rows {
            return Err(RetrievalError::RowOutOfRange { row: it.row, rows });
        }
    }
    embeddings.check_finite()?;
    let gallery_len = split.gallery.len();
    let mut ks: Vec<usize> = ks
        .iter()
        .map(|&k| clamp_k(k, gallery_len))
        .collect::<Result<_, _>>()?;
    ks.sort_unstable();
    ks.dedup();
    let k_max = *ks.last().ok_or(RetrievalError::ZeroK)?;

    let g_rows: Vec<usize> = split.gallery.iter().map(|g| g.row).collect();
    let q_rows: Vec<usize> = split.queries.iter().map(|q| q.row).collect();
    let gallery = l2_normalize(&embeddings.select_rows(&g_rows)?)?;
    let queries = l2_normalize(&embeddings.select_rows(&q_rows)?)?;

    let mut totals: HashMap<u32, usize> = HashMap::new();
    for g in &split.gallery {
        *totals.entry(g.label.0).or_default() += 1;
    }

    // per query: None when excluded, else (ap per k, hit per k)
    let per_query: Vec<Option<(Vec<f64>, Vec<f64>)>> = split
        .queries
        .par_iter()
        .enumerate()
        .map(|(qi, q)| {
            let relevant_total = totals.get(&q.label.0).copied().unwrap_or(0);
            if relevant_total == 0 {
                return None;
            }
            let qv = queries.row(qi);
            let mut scored: Vec<(f64, u64, usize)> = gallery
                .iter_rows()
                .enumerate()
                .map(|(gi, r)| (dot(qv, r), split.gallery[gi].id, gi))
                .collect();
            let cmp = |a: &(f64, u64, usize), b: &(f64, u64, usize)| {
                by_score_then_id((a.0, a.1), (b.0, b.1))
            };
            if k_max < scored.len() {
                scored.select_nth_unstable_by(k_max - 1, cmp);
                scored.truncate(k_max);
            }
            scored.sort_by(cmp);
            let relevance: Vec<bool> = scored
                .iter()
                .map(|s| split.gallery[s.2].label == q.label)
                .collect();
            Some((
                ks.iter()
                    .map(|&k| average_precision_at_k(&relevance, relevant_total, k))
                    .collect(),
                ks.iter().map(|&k| hit_at_k(&relevance, k)).collect(),
            ))
        })
        .collect();

    let mut excluded = Vec::new();
    let mut totals_ap = vec![0.0; ks.len()];
    let mut totals_hit = vec![0.0; ks.len()];
    let mut per_style_acc: BTreeMap<u32, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut scored = 0usize;
    for (q, res) in split.queries.iter().zip(&per_query) {
        let Some((ap, hit)) = res else {
            log::warn!("query {} has no same-label gallery item; excluded", q.id);
            excluded.push(q.id);
            continue;
        };
        scored += 1;
        let entry = per_style_acc
            .entry(q.label.0)
            .or_insert_with(|| (0, vec![0.0; ks.len()], vec![0.0; ks.len()]));
        entry.0 += 1;
        for i in 0..ks.len() {
            totals_ap[i] += ap[i];
            totals_hit[i] += hit[i];
            entry.1[i] += ap[i];
            entry.2[i] += hit[i];
        }
    }
    if scored == 0 {
        return Err(RetrievalError::NoQueries);
    }
    let to_map = |sums: &[f64], n: usize| -> BTreeMap<usize, f64> {
        ks.iter()
            .zip(sums)
            .map(|(&k, &s)| (k, s / n as f64))
            .collect()
    };
    Ok(MetricReport {
        queries: scored,
        gallery: gallery_len,
        map_at: to_map(&totals_ap, scored),
        recall_at: to_map(&totals_hit, scored),
        per_style: per_style_acc
            .into_iter()
            .map(|(l, (n, ap, hit))| {
                (
                    l,
                    StyleMetrics {
                        queries: n,
                        map_at: to_map(&ap, n),
                        recall_at: to_map(&hit, n),
                    },
                )
            })
            .collect(),
        excluded_queries: excluded,
    })
}
