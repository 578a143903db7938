use rayon::prelude::*;

use super::{
    sorted_by_id, DedupConfig, DedupError, DedupOutcome, DedupStage, DuplicateGroup, DuplicateLink,
};
use crate::record::PromptRecord;
use crate::vector::{dot, EmbeddingMatrix};

/// Greedy cosine dedup in id order: a record is dropped when its cosine to
/// any earlier survivor reaches `semantic_threshold`.
///
/// Neighbor lists over all earlier records are computed exhaustively in
/// parallel; the greedy pass that consults survivor status is sequential,
/// so results equal a plain sequential scan.
pub fn semantic_dedup(
    records: &[PromptRecord],
    embeddings: &EmbeddingMatrix,
    config: &DedupConfig,
) -> Result<DedupOutcome, DedupError> {
    config.validate()?;
    if !embeddings.is_normalized() && embeddings.rows() > 0 {
        return Err(DedupError::NotNormalized);
    }
    let sorted = sorted_by_id(records);
    let rows: Vec<&[f64]> = sorted
        .iter()
        .map(|r| {
            let row = r.embedding_row.ok_or(DedupError::MissingEmbedding(r.id))?;
            embeddings
                .try_row(row as usize)
                .map_err(|_| DedupError::EmbeddingOutOfRange { id: r.id, row })
        })
        .collect::<Result<_, _>>()?;

    let threshold = config.semantic_threshold;
    let neighbors: Vec<Vec<(usize, f64)>> = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            (0..i)
                .filter_map(|j| {
                    let c = dot(rows[i], rows[j]);
                    (c >= threshold).then_some((j, c))
                })
                .collect()
        })
        .collect();

    let mut survivor = vec![false; rows.len()];
    let mut absorbed: Vec<Vec<u64>> = vec![Vec::new(); rows.len()];
    let mut links = Vec::new();
    for (i, nb) in neighbors.iter().enumerate() {
        match nb.iter().find(|(j, _)| survivor[*j]) {
            Some(&(j, score)) => {
                absorbed[j].push(sorted[i].id);
                links.push(DuplicateLink {
                    a: sorted[j].id,
                    b: sorted[i].id,
                    score,
                });
            }
            None => survivor[i] = true,
        }
    }

    let mut survivors = Vec::new();
    let mut groups = Vec::new();
    for (i, r) in sorted.iter().enumerate() {
        if !survivor[i] {
            continue;
        }
        survivors.push((*r).clone());
        if !absorbed[i].is_empty() {
            let mut member_ids = vec![r.id];
            member_ids.append(&mut absorbed[i]);
            groups.push(DuplicateGroup {
                representative_id: r.id,
                member_ids,
                stage: DedupStage::Semantic,
            });
        }
    }
    Ok(DedupOutcome {
        survivors,
        groups,
        links,
    })
}
