//! Hierarchical k-means over prompt embeddings and top-down shared-cap
//! balanced sampling.

mod kmeans;
mod report;
mod sampler;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmeans::{lloyd_kmeans, KMeansResult};
pub use report::{balance_report, BalanceReport, ClusterShare, LevelReport};
pub use sampler::{compute_shared_cap, hierarchical_sample, SampleOptions, SampleOutcome};
pub use tree::{build_cluster_tree, ClusterLevel, ClusterTree};

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("invalid k-means config: {0}")]
    Config(String),
    #[error("k = {k} exceeds the {rows} available points")]
    TooFewPoints { k: usize, rows: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("non-finite value in point {row}")]
    NonFinite { row: usize },
    #[error("cluster size list is empty")]
    EmptySizes,
    #[error("budget {budget} outside [1, {total}]")]
    Budget { budget: usize, total: usize },
    #[error("allocation {allocated} exceeds size {size} of cluster {cluster} at level {level}")]
    Infeasible {
        level: usize,
        cluster: usize,
        allocated: usize,
        size: usize,
    },
    #[error("selected item {0} is not in the tree")]
    UnknownItem(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    /// Cluster counts from the lowest level to the highest.
    pub levels: Vec<usize>,
    pub max_iters: usize,
    /// Relative inertia change below which iteration stops.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            levels: vec![50_000, 10_000, 5_000, 1_000],
            max_iters: 100,
            tol: 1e-4,
            seed: 7,
        }
    }
}

impl KMeansConfig {
    pub fn diagnostics(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.levels.is_empty() {
            out.push(("levels", "must list at least one level".to_string()));
        } else if self.levels.contains(&0) {
            out.push((
                "levels",
                "every level needs at least one cluster".to_string(),
            ));
        } else if self.levels.windows(2).any(|w| w[1] >= w[0]) {
            out.push((
                "levels",
                format!("must be strictly decreasing, got {:?}", self.levels),
            ));
        }
        if self.max_iters == 0 {
            out.push(("max_iters", "must be at least 1".to_string()));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            out.push(("tol", "must be a finite non-negative number".to_string()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), BalanceError> {
        match self.diagnostics().into_iter().next() {
            Some((field, msg)) => Err(BalanceError::Config(format!("{field}: {msg}"))),
            None => Ok(()),
        }
    }
}

/// Per-stream seed derived from a base seed and a stream index.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_validation() {
        assert!(KMeansConfig::default().diagnostics().is_empty());
        let c = KMeansConfig {
            levels: vec![10, 10, 2],
            ..Default::default()
        };
        assert_eq!(c.diagnostics()[0].0, "levels");
        let c = KMeansConfig {
            levels: vec![],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
