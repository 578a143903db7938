//! Content-style combination planning: every style prompt is paired with
//! `n` content prompts drawn without replacement.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::derive_seed;
use crate::record::{CombinationStatus, StyleCombination};

/// Joins content and style text in a combined generation prompt.
pub const SEPARATOR: &str = "\n——\n";
const ESCAPED_SEPARATOR: &str = "\n— —\n";

#[derive(Debug, Error, PartialEq)]
pub enum PairingError {
    #[error("cannot draw {n} contents per style from a pool of {pool}")]
    TooFewContents { n: usize, pool: usize },
    #[error("{styles} styles x {n} contents need {needed} distinct contents without reuse, pool has {pool}")]
    ReuseExhausted {
        styles: usize,
        n: usize,
        needed: usize,
        pool: usize,
    },
    #[error("n_contents_per_style must be at least 1")]
    ZeroN,
    #[error("style pool is empty")]
    NoStyles,
    #[error("duplicate {kind} id {id:#018x}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("{0} text is empty")]
    EmptyText(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingConfig {
    pub n_contents_per_style: usize,
    pub seed: u64,
    pub allow_content_reuse_across_styles: bool,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            n_contents_per_style: 8,
            seed: 7,
            allow_content_reuse_across_styles: true,
        }
    }
}

fn check_unique(ids: &[u64], kind: &'static str) -> Result<(), PairingError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for &id in ids {
        if !seen.insert(id) {
            return Err(PairingError::DuplicateId { kind, id });
        }
    }
    Ok(())
}

/// Plans `|styles| * n` combinations, styles taken in ascending id order.
///
/// Each style draws from a ChaCha stream keyed by `(seed, style_id)`, so a
/// style's contents do not depend on which other styles are in the pool.
/// When content reuse is disabled, draws come from the shrinking pool of
/// unused contents instead.
pub fn make_combinations(
    style_ids: &[u64],
    content_ids: &[u64],
    config: &PairingConfig,
) -> Result<Vec<StyleCombination>, PairingError> {
    let n = config.n_contents_per_style;
    if n == 0 {
        return Err(PairingError::ZeroN);
    }
    if style_ids.is_empty() {
        return Err(PairingError::NoStyles);
    }
    if n > content_ids.len() {
        return Err(PairingError::TooFewContents {
            n,
            pool: content_ids.len(),
        });
    }
    check_unique(style_ids, "style")?;
    check_unique(content_ids, "content")?;
    let mut styles = style_ids.to_vec();
    styles.sort_unstable();
    let mut contents = content_ids.to_vec();
    contents.sort_unstable();

    let mut out = Vec::with_capacity(styles.len() * n);
    if config.allow_content_reuse_across_styles {
        for &s in &styles {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, s));
            for i in index::sample(&mut rng, contents.len(), n) {
                out.push(StyleCombination::new(s, contents[i]));
            }
        }
    } else {
        let needed = styles.len() * n;
        if needed > contents.len() {
            return Err(PairingError::ReuseExhausted {
                styles: styles.len(),
                n,
                needed,
                pool: contents.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let order = index::sample(&mut rng, contents.len(), needed).into_vec();
        for (chunk, &s) in order.chunks_exact(n).zip(&styles) {
            out.extend(chunk.iter().map(|&i| StyleCombination::new(s, contents[i])));
        }
    }
    Ok(out)
}

/// Carries statuses of an earlier plan into a fresh one so that completed
/// combinations are not regenerated.
pub fn resume_plan(
    previous: &[StyleCombination],
    fresh: Vec<StyleCombination>,
) -> Vec<StyleCombination> {
    let done: HashMap<u64, &StyleCombination> = previous
        .iter()
        .filter(|c| c.status == CombinationStatus::Done)
        .map(|c| (c.combination_id, c))
        .collect();
    fresh
        .into_iter()
        .map(|c| match done.get(&c.combination_id) {
            Some(prev) => (*prev).clone(),
            None => c,
        })
        .collect()
}

/// Combinations that still need a generation call.
pub fn pending(combos: &[StyleCombination]) -> impl Iterator<Item = &StyleCombination> {
    combos
        .iter()
        .filter(|c| c.status != CombinationStatus::Done)
}

fn escape(text: &str, which: &str) -> String {
    if text.contains(SEPARATOR) {
        log::warn!("{which} prompt contains the combination separator; escaping it");
        text.replace(SEPARATOR, ESCAPED_SEPARATOR)
    } else {
        text.to_string()
    }
}

/// Content text, separator, style text.
pub fn compose_prompt(style_text: &str, content_text: &str) -> Result<String, PairingError> {
    if style_text.is_empty() {
        return Err(PairingError::EmptyText("style"));
    }
    if content_text.is_empty() {
        return Err(PairingError::EmptyText("content"));
    }
    Ok(format!(
        "{}{SEPARATOR}{}",
        escape(content_text, "content"),
        escape(style_text, "style")
    ))
}

/// Inverse of [`compose_prompt`]: returns `(content, style)`.
pub fn split_prompt(combined: &str) -> Option<(&str, &str)> {
    combined.split_once(SEPARATOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: u64, offset: u64) -> Vec<u64> {
        (0..n).map(|i| i * 7919 + offset).collect()
    }

    #[test]
    fn counts_and_uniqueness() {
        let c = make_combinations(&ids(17, 1), &ids(40, 3), &PairingConfig::default()).unwrap();
        assert_eq!(c.len(), 17 * 8);
        let pairs: HashSet<(u64, u64)> = c.iter().map(|x| (x.style_id, x.content_id)).collect();
        assert_eq!(pairs.len(), c.len());
        assert!(c.iter().all(|x| x.status == CombinationStatus::Pending));
    }

    #[test]
    fn exhaustive_single_style() {
        let contents = ids(8, 3);
        let c = make_combinations(&[5], &contents, &PairingConfig::default()).unwrap();
        let mut got: Vec<u64> = c.iter().map(|x| x.content_id).collect();
        got.sort_unstable();
        assert_eq!(got, contents);
    }

    #[test]
    fn seed_controls_the_plan() {
        let cfg = PairingConfig::default();
        let a = make_combinations(&ids(10, 1), &ids(100, 2), &cfg).unwrap();
        let b = make_combinations(&ids(10, 1), &ids(100, 2), &cfg).unwrap();
        let c = make_combinations(&ids(10, 1), &ids(100, 2), &PairingConfig { seed: 8, ..cfg })
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), c.len());
    }

    #[test]
    fn without_reuse_contents_are_disjoint_across_styles() {
        let cfg = PairingConfig {
            n_contents_per_style: 3,
            allow_content_reuse_across_styles: false,
            ..Default::default()
        };
        let c = make_combinations(&ids(5, 1), &ids(15, 2), &cfg).unwrap();
        let used: HashSet<u64> = c.iter().map(|x| x.content_id).collect();
        assert_eq!(used.len(), 15);
        assert!(matches!(
            make_combinations(&ids(6, 1), &ids(15, 2), &cfg),
            Err(PairingError::ReuseExhausted { needed: 18, .. })
        ));
    }

    #[test]
    fn errors() {
        let cfg = PairingConfig::default();
        assert_eq!(
            make_combinations(&[1], &ids(3, 0), &cfg),
            Err(PairingError::TooFewContents { n: 8, pool: 3 })
        );
        assert_eq!(
            make_combinations(&[], &ids(10, 0), &cfg),
            Err(PairingError::NoStyles)
        );
        assert!(matches!(
            make_combinations(&[1, 1], &ids(10, 0), &cfg),
            Err(PairingError::DuplicateId { kind: "style", .. })
        ));
    }

    #[test]
    fn resume_keeps_done_items() {
        let cfg = PairingConfig::default();
        let mut first = make_combinations(&ids(3, 1), &ids(20, 2), &cfg).unwrap();
        first[0].status = CombinationStatus::Done;
        first[1].status = CombinationStatus::Failed;
        let fresh = make_combinations(&ids(3, 1), &ids(20, 2), &cfg).unwrap();
        let resumed = resume_plan(&first, fresh);
        assert_eq!(resumed[0].status, CombinationStatus::Done);
        assert_eq!(pending(&resumed).count(), resumed.len() - 1);
    }

    #[test]
    fn compose_format() {
        let p = compose_prompt("In the style of ukiyo-e, …", "a cat sits").unwrap();
        assert_eq!(p, "a cat sits\n——\nIn the style of ukiyo-e, …");
        assert_eq!(
            compose_prompt("", "x"),
            Err(PairingError::EmptyText("style"))
        );
        assert_eq!(
            compose_prompt("x", ""),
            Err(PairingError::EmptyText("content"))
        );
    }

    #[test]
    fn separator_inside_text_is_escaped() {
        let p = compose_prompt("style", &format!("a{SEPARATOR}b")).unwrap();
        assert_eq!(p.matches(SEPARATOR).count(), 1);
        assert_eq!(split_prompt(&p).unwrap().1, "style");
    }

    proptest! {
        #[test]
        fn split_inverts_compose(style in "[^\\n]{1,40}", content in "[^\\n]{1,40}") {
            let p = compose_prompt(&style, &content).unwrap();
            prop_assert_eq!(split_prompt(&p), Some((content.as_str(), style.as_str())));
        }
    }
}
