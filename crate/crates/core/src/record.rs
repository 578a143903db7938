//! Manifest record types.

use serde::{Deserialize, Serialize};

use crate::ids;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Content,
    Style,
}

/// Pipeline stage of a manifest. Ordering follows pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Deduped,
    Balanced,
    Paired,
    Generated,
}

/// One content or style prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: u64,
    kind: PromptKind,
    pub text: String,
    pub source_tag: String,
    #[serde(default)]
    pub embedding_row: Option<u64>,
}

impl PromptRecord {
    /// Record whose id is derived from `(source_tag, index)`.
    pub fn new(
        kind: PromptKind,
        text: impl Into<String>,
        source_tag: impl Into<String>,
        index: u64,
    ) -> Self {
        let source_tag = source_tag.into();
        Self {
            id: ids::record_id(&source_tag, index),
            kind,
            text: text.into(),
            source_tag,
            embedding_row: None,
        }
    }

    pub fn with_id(
        id: u64,
        kind: PromptKind,
        text: impl Into<String>,
        source_tag: impl Into<String>,
    ) -> Self {
        Self {
            id,
            kind,
            text: text.into(),
            source_tag: source_tag.into(),
            embedding_row: None,
        }
    }

    pub fn with_embedding_row(mut self, row: u64) -> Self {
        self.embedding_row = Some(row);
        self
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinationStatus {
    Pending,
    Done,
    Failed,
}

/// Provenance of a generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub image_ref: Option<String>,
    pub seed: u64,
    pub steps: u32,
    pub cfg_scale: f64,
    pub attempts: u32,
    pub error: Option<String>,
}

/// One (style prompt, content prompt) pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleCombination {
    pub combination_id: u64,
    pub style_id: u64,
    pub content_id: u64,
    pub generation_seed: u64,
    pub status: CombinationStatus,
    #[serde(default)]
    pub generation: Option<GenerationRecord>,
}

impl StyleCombination {
    pub fn new(style_id: u64, content_id: u64) -> Self {
        let combination_id = ids::combination_id(style_id, content_id);
        Self {
            combination_id,
            style_id,
            content_id,
            generation_seed: combination_id & 0xffff_ffff,
            status: CombinationStatus::Pending,
            generation: None,
        }
    }
}

/// Style identifier in `[0, M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleLabel(pub u32);

/// Remaps arbitrary labels onto a contiguous `0..M` range, preserving order.
pub fn compact_labels<T: Ord + Clone>(labels: &[T]) -> Vec<StyleLabel> {
    let mut distinct: Vec<T> = labels.to_vec();
    distinct.sort();
    distinct.dedup();
    labels
        .iter()
        .map(|l| StyleLabel(distinct.binary_search(l).expect("present") as u32))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Prompt(PromptRecord),
    Combination(StyleCombination),
}

impl Record {
    pub fn id(&self) -> u64 {
        match self {
            Record::Prompt(p) => p.id,
            Record::Combination(c) => c.combination_id,
        }
    }

    pub fn as_prompt(&self) -> Option<&PromptRecord> {
        match self {
            Record::Prompt(p) => Some(p),
            Record::Combination(_) => None,
        }
    }

    pub fn as_combination(&self) -> Option<&StyleCombination> {
        match self {
            Record::Combination(c) => Some(c),
            Record::Prompt(_) => None,
        }
    }
}

impl From<PromptRecord> for Record {
    fn from(p: PromptRecord) -> Self {
        Record::Prompt(p)
    }
}

impl From<StyleCombination> for Record {
    fn from(c: StyleCombination) -> Self {
        Record::Combination(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_seed_is_low_bits_of_combination_id() {
        let c = StyleCombination::new(10, 20);
        assert_eq!(c.generation_seed, c.combination_id & 0xffff_ffff);
        assert_eq!(c, StyleCombination::new(10, 20));
    }

    #[test]
    fn stage_order_follows_pipeline() {
        assert!(Stage::Raw < Stage::Deduped);
        assert!(Stage::Paired < Stage::Generated);
    }

    #[test]
    fn compaction_is_contiguous() {
        let l = compact_labels(&[40, 7, 40, 12]);
        assert_eq!(
            l,
            vec![StyleLabel(2), StyleLabel(0), StyleLabel(2), StyleLabel(1)]
        );
    }
}
