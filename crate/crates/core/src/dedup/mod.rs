//! Three-stage prompt deduplication: exact text, MinHash/LSH fuzzy, and
//! embedding-cosine semantic.
//!
//! Every stage keeps the record with the smallest id in a duplicate set and
//! reports each dropped record in exactly one [`DuplicateGroup`].

mod exact;
mod fuzzy;
mod minhash;
mod semantic;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::record::PromptRecord;
use crate::vector::EmbeddingMatrix;

pub use exact::exact_dedup;
pub use fuzzy::fuzzy_dedup;
pub use minhash::{exact_jaccard, minhash_signature, shingles, MinHasher, Signature};
pub use semantic::semantic_dedup;

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("invalid dedup config: {0}")]
    Config(String),
    #[error("record {0:#018x} is empty after normalization")]
    EmptyText(u64),
    #[error("record {0:#018x} has no embedding row")]
    MissingEmbedding(u64),
    #[error("embedding row {row} for record {id:#018x} is out of range")]
    EmbeddingOutOfRange { id: u64, row: u64 },
    #[error("semantic dedup requires normalized embeddings")]
    NotNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub shingle_size: usize,
    pub num_hashes: usize,
    pub lsh_bands: usize,
    pub jaccard_threshold: f64,
    pub semantic_threshold: f64,
    pub seed: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            shingle_size: 3,
            num_hashes: 256,
            lsh_bands: 32,
            jaccard_threshold: 0.8,
            semantic_threshold: 0.95,
            seed: 0x5eed_0001,
        }
    }
}

impl DedupConfig {
    /// Lists every violated invariant as `(field, message)`.
    pub fn diagnostics(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.shingle_size == 0 {
            out.push(("shingle_size", "must be at least 1".to_string()));
        }
        if self.num_hashes == 0 {
            out.push(("num_hashes", "must be at least 1".to_string()));
        }
        if self.lsh_bands == 0 || !self.num_hashes.is_multiple_of(self.lsh_bands.max(1)) {
            out.push((
                "lsh_bands",
                format!("must divide num_hashes ({})", self.num_hashes),
            ));
        }
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            out.push(("jaccard_threshold", "must lie in (0, 1]".to_string()));
        }
        if !(self.semantic_threshold > 0.0 && self.semantic_threshold <= 1.0) {
            out.push(("semantic_threshold", "must lie in (0, 1]".to_string()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), DedupError> {
        match self.diagnostics().into_iter().next() {
            Some((field, msg)) => Err(DedupError::Config(format!("{field}: {msg}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupStage {
    Exact,
    Fuzzy,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub representative_id: u64,
    /// Sorted; includes the representative.
    pub member_ids: Vec<u64>,
    pub stage: DedupStage,
}

/// A direct duplicate relation found by a stage, with its score
/// (1 for exact, estimated Jaccard for fuzzy, cosine for semantic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuplicateLink {
    pub a: u64,
    pub b: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DedupOutcome {
    /// Surviving records in id order.
    pub survivors: Vec<PromptRecord>,
    pub groups: Vec<DuplicateGroup>,
    pub links: Vec<DuplicateLink>,
}

impl DedupOutcome {
    pub fn dropped_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.groups.iter().flat_map(|g| {
            g.member_ids
                .iter()
                .copied()
                .filter(move |&m| m != g.representative_id)
        })
    }
}

/// Result of running all three stages in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOutcome {
    pub survivors: Vec<PromptRecord>,
    pub groups: Vec<DuplicateGroup>,
    /// Survivor count after each of exact, fuzzy, semantic.
    pub stage_counts: [usize; 3],
}

/// Runs exact, fuzzy and semantic dedup in sequence.
pub fn dedup_all(
    records: &[PromptRecord],
    embeddings: &EmbeddingMatrix,
    config: &DedupConfig,
) -> Result<PipelineOutcome, DedupError> {
    config.validate()?;
    let exact = exact_dedup(records);
    let fuzzy = fuzzy_dedup(&exact.survivors, config)?;
    let semantic = semantic_dedup(&fuzzy.survivors, embeddings, config)?;
    let stage_counts = [
        exact.survivors.len(),
        fuzzy.survivors.len(),
        semantic.survivors.len(),
    ];
    let mut groups = exact.groups;
    groups.extend(fuzzy.groups);
    groups.extend(semantic.groups);
    Ok(PipelineOutcome {
        survivors: semantic.survivors,
        groups,
        stage_counts,
    })
}

/// NFC normalization plus whitespace collapse; case is preserved.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn sorted_by_id(records: &[PromptRecord]) -> Vec<&PromptRecord> {
    let mut v: Vec<&PromptRecord> = records.iter().collect();
    v.sort_by_key(|r| r.id);
    v
}
