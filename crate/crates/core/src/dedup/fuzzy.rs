use std::collections::HashMap;

use rayon::prelude::*;

use super::minhash::{MinHasher, Signature};
use super::{
    sorted_by_id, DedupConfig, DedupError, DedupOutcome, DedupStage, DuplicateGroup, DuplicateLink,
};
use crate::ids::fnv1a64;
use crate::record::PromptRecord;

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Roots at the smaller index, which is the smaller id since input is id-sorted.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn band_key(band: usize, rows: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(8 * rows.len() + 8);
    buf.extend_from_slice(&(band as u64).to_le_bytes());
    for r in rows {
        buf.extend_from_slice(&r.to_le_bytes());
    }
    fnv1a64(&buf)
}

/// Candidate pairs `(i, j)` with `i < j` sharing at least one LSH band.
fn candidate_pairs(signatures: &[Signature], bands: usize) -> Vec<(usize, usize)> {
    let rows = signatures.first().map_or(0, |s| s.len() / bands);
    let mut pairs: Vec<(usize, usize)> = (0..bands)
        .into_par_iter()
        .flat_map_iter(|band| {
            let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
            for (i, sig) in signatures.iter().enumerate() {
                let key = band_key(band, &sig.0[band * rows..(band + 1) * rows]);
                buckets.entry(key).or_default().push(i);
            }
            let mut out = Vec::new();
            for members in buckets.into_values().filter(|m| m.len() > 1) {
                for (x, &i) in members.iter().enumerate() {
                    for &j in &members[x + 1..] {
                        out.push((i, j));
                    }
                }
            }
            out
        })
        .collect();
    pairs.par_sort_unstable();
    pairs.dedup();
    pairs
}

/// MinHash/LSH near-duplicate removal.
///
/// LSH banding proposes candidates, candidates whose estimated Jaccard
/// reaches `jaccard_threshold` are merged with union-find, and the smallest
/// id of each connected component survives.
pub fn fuzzy_dedup(
    records: &[PromptRecord],
    config: &DedupConfig,
) -> Result<DedupOutcome, DedupError> {
    config.validate()?;
    let sorted = sorted_by_id(records);
    let hasher = MinHasher::new(config);
    let signatures: Vec<Signature> = sorted
        .par_iter()
        .map(|r| hasher.signature(&r.text).ok_or(DedupError::EmptyText(r.id)))
        .collect::<Result<_, _>>()?;

    let merged: Vec<(usize, usize, f64)> = candidate_pairs(&signatures, config.lsh_bands)
        .into_par_iter()
        .filter_map(|(i, j)| {
            let est = signatures[i].estimated_jaccard(&signatures[j]);
            (est >= config.jaccard_threshold).then_some((i, j, est))
        })
        .collect();

    let mut uf = UnionFind::new(sorted.len());
    for &(i, j, _) in &merged {
        uf.union(i, j);
    }
    let mut components: HashMap<usize, Vec<u64>> = HashMap::new();
    let mut survivors = Vec::new();
    for (i, r) in sorted.iter().enumerate() {
        let root = uf.find(i);
        if root == i {
            survivors.push((*r).clone());
        }
        components.entry(root).or_default().push(r.id);
    }
    let mut groups: Vec<DuplicateGroup> = components
        .into_values()
        .filter(|m| m.len() > 1)
        .map(|member_ids| DuplicateGroup {
            representative_id: member_ids[0],
            member_ids,
            stage: DedupStage::Fuzzy,
        })
        .collect();
    groups.sort_by_key(|g| g.representative_id);
    let links = merged
        .into_iter()
        .map(|(i, j, score)| DuplicateLink {
            a: sorted[i].id,
            b: sorted[j].id,
            score,
        })
        .collect();
    Ok(DedupOutcome {
        survivors,
        groups,
        links,
    })
}
