use serde::{Deserialize, Serialize};

use super::{derive_seed, lloyd_kmeans, BalanceError, KMeansConfig};
use crate::vector::EmbeddingMatrix;

/// One level of the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLevel {
    /// For level 0, item -> cluster; above, child cluster -> cluster.
    pub assignments: Vec<usize>,
    pub centroids: EmbeddingMatrix,
    /// Raw item count under each cluster.
    pub sizes: Vec<usize>,
    /// For level 0, item indices; above, child cluster indices. Sorted.
    pub children: Vec<Vec<usize>>,
}

impl ClusterLevel {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

/// Bottom-up cluster hierarchy; level 0 clusters the raw items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTree {
    pub items: usize,
    pub levels: Vec<ClusterLevel>,
}

impl ClusterTree {
    pub fn top(&self) -> &ClusterLevel {
        self.levels.last().expect("tree has at least one level")
    }

    /// Cluster one level up that contains `cluster` at `level`.
    pub fn parent(&self, level: usize, cluster: usize) -> Option<usize> {
        self.levels.get(level + 1).map(|l| l.assignments[cluster])
    }

    /// Lowest-level cluster of each item.
    pub fn leaf_of(&self, item: usize) -> usize {
        self.levels[0].assignments[item]
    }

    /// Assembles a tree from per-level assignment vectors, deriving sizes and
    /// children. Centroids are left as zero matrices of the given `dim`.
    pub fn from_assignments(items: usize, assignments: Vec<Vec<usize>>, dim: usize) -> Self {
        let mut levels = Vec::with_capacity(assignments.len());
        let mut child_sizes: Vec<usize> = vec![1; items];
        for assign in assignments {
            let k = assign.iter().copied().max().map_or(0, |m| m + 1);
            let mut sizes = vec![0; k];
            let mut children = vec![Vec::new(); k];
            for (child, &c) in assign.iter().enumerate() {
                sizes[c] += child_sizes[child];
                children[c].push(child);
            }
            child_sizes = sizes.clone();
            levels.push(ClusterLevel {
                assignments: assign,
                centroids: EmbeddingMatrix::zeros(k, dim),
                sizes,
                children,
            });
        }
        Self { items, levels }
    }

    /// Checks size aggregation, child/assignment consistency and that every
    /// item reaches exactly one top-level cluster.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut below = self.items;
        let mut below_sizes: Vec<usize> = vec![1; self.items];
        for (l, level) in self.levels.iter().enumerate() {
            if level.assignments.len() != below {
                return Err(format!(
                    "level {l}: {} assignments for {below} children",
                    level.assignments.len()
                ));
            }
            let mut agg = vec![0; level.len()];
            for (child, &c) in level.assignments.iter().enumerate() {
                if c >= level.len() {
                    return Err(format!(
                        "level {l}: child {child} assigned to missing cluster {c}"
                    ));
                }
                agg[c] += below_sizes[child];
                if level.children[c].binary_search(&child).is_err() {
                    return Err(format!("level {l}: child {child} missing from cluster {c}"));
                }
            }
            if agg != level.sizes {
                return Err(format!("level {l}: sizes do not aggregate the level below"));
            }
            if level.sizes.iter().sum::<usize>() != self.items {
                return Err(format!("level {l}: sizes do not sum to {}", self.items));
            }
            if level.children.iter().map(Vec::len).sum::<usize>() != below {
                return Err(format!("level {l}: children are not a partition"));
            }
            below = level.len();
            below_sizes = level.sizes.clone();
        }
        Ok(())
    }
}

/// Bottom-up hierarchical k-means: level 0 clusters `points`, each later
/// level clusters the previous level's centroids.
pub fn build_cluster_tree(
    points: &EmbeddingMatrix,
    config: &KMeansConfig,
) -> Result<ClusterTree, BalanceError> {
    config.validate()?;
    let mut levels: Vec<ClusterLevel> = Vec::with_capacity(config.levels.len());
    for (l, &k) in config.levels.iter().enumerate() {
        let level_cfg = KMeansConfig {
            seed: derive_seed(config.seed, l as u64),
            ..config.clone()
        };
        let input = levels.last().map_or(points, |prev| &prev.centroids);
        let result = lloyd_kmeans(input, k, &level_cfg)?;
        let below_sizes: Vec<usize> = levels
            .last()
            .map_or_else(|| vec![1; points.rows()], |p| p.sizes.clone());
        let mut sizes = vec![0; k];
        let mut children = vec![Vec::new(); k];
        for (child, &c) in result.assignments.iter().enumerate() {
            sizes[c] += below_sizes[child];
            children[c].push(child);
        }
        levels.push(ClusterLevel {
            assignments: result.assignments,
            centroids: result.centroids,
            sizes,
            children,
        });
    }
    Ok(ClusterTree {
        items: points.rows(),
        levels,
    })
}
