use serde::{Deserialize, Serialize};

use super::{BalanceError, ClusterTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterShare {
    pub cluster: usize,
    pub raw: usize,
    pub selected: usize,
    pub raw_share: f64,
    pub selected_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub clusters: Vec<ClusterShare>,
    /// max/min raw size over clusters.
    pub raw_max_min_ratio: f64,
    /// max/min selected count over clusters with a non-zero selection.
    pub selected_max_min_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub total_raw: usize,
    pub total_selected: usize,
    pub levels: Vec<LevelReport>,
}

fn max_min_ratio(values: impl Iterator<Item = usize>) -> f64 {
    let (mut lo, mut hi) = (usize::MAX, 0usize);
    for v in values.filter(|&v| v > 0) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == 0 {
        0.0
    } else {
        hi as f64 / lo as f64
    }
}

/// Per-cluster raw and selected counts at every level.
pub fn balance_report(
    tree: &ClusterTree,
    selected: &[usize],
) -> Result<BalanceReport, BalanceError> {
    let mut counts: Vec<usize> = vec![0; tree.levels[0].len()];
    for &item in selected {
        if item >= tree.items {
            return Err(BalanceError::UnknownItem(item));
        }
        counts[tree.leaf_of(item)] += 1;
    }
    let total_selected = selected.len();
    let share = |v: usize, total: usize| {
        if total == 0 {
            0.0
        } else {
            v as f64 / total as f64
        }
    };
    let mut levels = Vec::with_capacity(tree.levels.len());
    for (l, level) in tree.levels.iter().enumerate() {
        if l > 0 {
            let mut up = vec![0; level.len()];
            for (child, &c) in level.assignments.iter().enumerate() {
                up[c] += counts[child];
            }
            counts = up;
        }
        let clusters: Vec<ClusterShare> = level
            .sizes
            .iter()
            .zip(&counts)
            .enumerate()
            .map(|(cluster, (&raw, &sel))| ClusterShare {
                cluster,
                raw,
                selected: sel,
                raw_share: share(raw, tree.items),
                selected_share: share(sel, total_selected),
            })
            .collect();
        levels.push(LevelReport {
            level: l,
            raw_max_min_ratio: max_min_ratio(level.sizes.iter().copied()),
            selected_max_min_ratio: max_min_ratio(counts.iter().copied()),
            clusters,
        });
    }
    Ok(BalanceReport {
        total_raw: tree.items,
        total_selected,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::{hierarchical_sample, SampleOptions};

    fn skewed_tree() -> ClusterTree {
        // leaf sizes 80, 10, 6, 4
        let leaves: Vec<usize> = (0..100)
            .map(|i| match i {
                0..80 => 0,
                80..90 => 1,
                90..96 => 2,
                _ => 3,
            })
            .collect();
        ClusterTree::from_assignments(100, vec![leaves, vec![0, 0, 1, 1]], 1)
    }

    #[test]
    fn empty_selection_is_all_zero() {
        let r = balance_report(&skewed_tree(), &[]).unwrap();
        assert_eq!(r.total_selected, 0);
        for l in &r.levels {
            assert!(l
                .clusters
                .iter()
                .all(|c| c.selected == 0 && c.selected_share == 0.0));
        }
    }

    #[test]
    fn full_selection_matches_raw_shares() {
        let all: Vec<usize> = (0..100).collect();
        let r = balance_report(&skewed_tree(), &all).unwrap();
        for l in &r.levels {
            for c in &l.clusters {
                assert_eq!(c.raw_share, c.selected_share);
            }
            assert_eq!(l.clusters.iter().map(|c| c.selected).sum::<usize>(), 100);
        }
    }

    #[test]
    fn sampling_flattens_the_distribution() {
        let t = skewed_tree();
        let out = hierarchical_sample(&t, 40, 5, SampleOptions::default()).unwrap();
        let r = balance_report(&t, &out.selected).unwrap();
        let leaf = &r.levels[0];
        assert!(leaf.selected_max_min_ratio < leaf.raw_max_min_ratio);
        // dominant cluster loses share
        assert!(leaf.clusters[0].selected_share < leaf.clusters[0].raw_share);
        assert_eq!(
            leaf.clusters.iter().map(|c| c.selected).sum::<usize>(),
            out.selected.len()
        );
    }

    #[test]
    fn unknown_item_rejected() {
        assert_eq!(
            balance_report(&skewed_tree(), &[100]),
            Err(BalanceError::UnknownItem(100))
        );
    }
}
