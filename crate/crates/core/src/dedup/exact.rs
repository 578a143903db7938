use std::collections::HashMap;

use super::{
    normalize_text, sorted_by_id, DedupOutcome, DedupStage, DuplicateGroup, DuplicateLink,
};
use crate::record::PromptRecord;

/// Keeps one record per distinct normalized text; the smallest id survives.
pub fn exact_dedup(records: &[PromptRecord]) -> DedupOutcome {
    let sorted = sorted_by_id(records);
    let mut first: HashMap<String, usize> = HashMap::with_capacity(sorted.len());
    let mut members: Vec<Vec<u64>> = Vec::new();
    let mut survivors = Vec::new();
    for r in sorted {
        let key = normalize_text(&r.text);
        match first.get(&key) {
            Some(&g) => members[g].push(r.id),
            None => {
                first.insert(key, members.len());
                members.push(vec![r.id]);
                survivors.push(r.clone());
            }
        }
    }
    let mut groups = Vec::new();
    let mut links = Vec::new();
    for m in members.into_iter().filter(|m| m.len() > 1) {
        for &d in &m[1..] {
            links.push(DuplicateLink {
                a: m[0],
                b: d,
                score: 1.0,
            });
        }
        groups.push(DuplicateGroup {
            representative_id: m[0],
            member_ids: m,
            stage: DedupStage::Exact,
        });
    }
    DedupOutcome {
        survivors,
        groups,
        links,
    }
}
