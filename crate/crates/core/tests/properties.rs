use std::collections::HashSet;

use megacurate_core::balance::{
    build_cluster_tree, compute_shared_cap, hierarchical_sample, KMeansConfig, SampleOptions,
};
use megacurate_core::dedup::{exact_jaccard, minhash_signature, DedupConfig};
use megacurate_core::record::StyleLabel;
use megacurate_core::retrieval::{average_precision_at_k, map_at_k, recall_at_k, RankedResult};
use megacurate_core::vector::EmbeddingMatrix;
use proptest::prelude::*;

fn ranked(orders: &[Vec<usize>]) -> Vec<RankedResult> {
    orders
        .iter()
        .enumerate()
        .map(|(i, o)| RankedResult {
            query_id: i as u64,
            order: o.clone(),
            scores: (0..o.len()).map(|r| -(r as f64)).collect(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn shared_cap_is_optimal(sizes in prop::collection::vec(1usize..300, 1..20), frac in 0.0f64..1.0) {
        let total: usize = sizes.iter().sum();
        let budget = ((total as f64 * frac) as usize).max(1);
        let n = compute_shared_cap(&sizes, budget).unwrap();
        let dev = |n: usize| sizes.iter().map(|&s| s.min(n)).sum::<usize>().abs_diff(budget);
        let max = *sizes.iter().max().unwrap();
        prop_assert!((0..=max).all(|m| dev(n) <= dev(m)));
    }

    #[test]
    fn sampling_stays_within_bounds(seed in 0u64..1000, rows in 30usize..120, frac in 0.01f64..1.0) {
        let data: Vec<f64> = (0..rows * 3).map(|i| (((i as u64 + seed) * 2654435761) % 1000) as f64 / 1000.0).collect();
        let points = EmbeddingMatrix::new(rows, 3, data).unwrap();
        let tree = build_cluster_tree(&points, &KMeansConfig { levels: vec![8, 3], seed, ..KMeansConfig::default() }).unwrap();
        let budget = ((rows as f64 * frac) as usize).max(1);
        let loose = hierarchical_sample(&tree, budget, seed, SampleOptions::default()).unwrap();
        prop_assert!(loose.selected.len().abs_diff(budget) <= tree.top().len());
        let strict = hierarchical_sample(&tree, budget, seed, SampleOptions { strict: true }).unwrap();
        prop_assert_eq!(strict.selected.len(), budget);
        let unique: HashSet<usize> = strict.selected.iter().copied().collect();
        prop_assert_eq!(unique.len(), budget);
    }

    #[test]
    fn metrics_are_bounded_and_map1_is_recall1(
        labels in prop::collection::vec(0u32..4, 2..30),
        queries in prop::collection::vec(0u32..4, 1..8),
        seed in any::<u64>(),
    ) {
        let g: Vec<StyleLabel> = labels.iter().map(|&l| StyleLabel(l)).collect();
        let q: Vec<StyleLabel> = queries.iter().map(|&l| StyleLabel(l)).collect();
        let orders: Vec<Vec<usize>> = (0..q.len())
            .map(|i| {
                let mut o: Vec<usize> = (0..g.len()).collect();
                o.sort_by_key(|&j| (j as u64 ^ seed.rotate_left(i as u32)).wrapping_mul(0x9e3779b97f4a7c15));
                o
            })
            .collect();
        let r = ranked(&orders);
        if q.iter().any(|l| g.contains(l)) {
            let m1 = map_at_k(&r, &q, &g, 1).unwrap();
            prop_assert_eq!(m1, recall_at_k(&r, &q, &g, 1).unwrap());
            for k in [1, 3, 10, 100] {
                let m = map_at_k(&r, &q, &g, k).unwrap();
                let rc = recall_at_k(&r, &q, &g, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&m) && (0.0..=1.0).contains(&rc));
            }
        }
    }

    #[test]
    fn perfect_ranking_has_unit_ap(relevant in 1usize..20, rest in 0usize..20, k in 1usize..50) {
        let relevance: Vec<bool> = (0..relevant + rest).map(|i| i < relevant).collect();
        let ap = average_precision_at_k(&relevance, relevant, k);
        prop_assert!((ap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn minhash_estimate_tracks_exact_jaccard(words in prop::collection::vec("[a-z]{3,6}", 20..40), cut in 0usize..20) {
        let a = words.join(" ");
        let b = words[cut..].join(" ");
        let config = DedupConfig::default();
        let est = minhash_signature(&a, &config).unwrap().estimated_jaccard(&minhash_signature(&b, &config).unwrap());
        let exact = exact_jaccard(&a, &b, config.shingle_size);
        prop_assert!((est - exact).abs() < 0.2, "estimate {} vs exact {}", est, exact);
    }
}
