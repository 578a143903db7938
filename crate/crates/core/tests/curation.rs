//! Prompt curation through the on-disk formats: manifests and sidecars
//! written by one stage are read back by the next.

use std::collections::{HashMap, HashSet};

use megacurate_core::balance::{
    build_cluster_tree, hierarchical_sample, KMeansConfig, SampleOptions,
};
use megacurate_core::dedup::{dedup_all, DedupConfig};
use megacurate_core::pairing::{make_combinations, resume_plan, PairingConfig};
use megacurate_core::vector::{l2_normalize, EmbeddingMatrix};
use megacurate_core::{
    read_embeddings, read_manifest, write_embeddings, write_manifest, CombinationStatus, Manifest,
    PromptKind, PromptRecord, Stage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<PromptRecord>, EmbeddingMatrix) {
    let words = [
        "amber", "ochre", "ink", "gouache", "chalk", "linen", "fresco", "umber", "slate", "glaze",
    ];
    let mut records: Vec<PromptRecord> = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let text = if i % 10 == 9 {
            records[i - 1].text.clone()
        } else {
            (0..12)
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
                + &format!(" {i}")
        };
        records.push(
            PromptRecord::new(PromptKind::Style, text, "test", i as u64)
                .with_embedding_row(i as u64),
        );
        rows.push(
            (0..dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>(),
        );
    }
    (
        records,
        l2_normalize(&EmbeddingMatrix::from_rows(&rows).unwrap()).unwrap(),
    )
}

#[test]
fn dedup_then_balance_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (records, emb) = corpus(&mut rng, 600, 16);
    write_manifest(
        dir.path().join("raw.jsonl"),
        &Manifest::from_prompts(Stage::Raw, records).unwrap(),
    )
    .unwrap();
    write_embeddings(dir.path().join("raw.mgse"), &emb).unwrap();

    let raw = read_manifest(dir.path().join("raw.jsonl")).unwrap();
    let emb = read_embeddings(dir.path().join("raw.mgse")).unwrap();
    let prompts: Vec<PromptRecord> = raw.prompts().cloned().collect();
    let outcome = dedup_all(&prompts, &emb, &DedupConfig::default()).unwrap();
    assert_eq!(outcome.stage_counts[0], 540);
    assert!(outcome.stage_counts[2] <= outcome.stage_counts[1]);
    assert!(outcome.stage_counts[1] <= outcome.stage_counts[0]);
    let dropped: usize = outcome.groups.iter().map(|g| g.member_ids.len() - 1).sum();
    assert_eq!(dropped, 600 - outcome.survivors.len());

    let rows: Vec<usize> = outcome
        .survivors
        .iter()
        .map(|r| r.embedding_row.unwrap() as usize)
        .collect();
    let points = emb.select_rows(&rows).unwrap();
    let config = KMeansConfig {
        levels: vec![24, 6],
        ..KMeansConfig::default()
    };
    let tree = build_cluster_tree(&points, &config).unwrap();
    let sample = hierarchical_sample(&tree, 100, 3, SampleOptions { strict: true }).unwrap();
    assert_eq!(sample.selected.len(), 100);
    let chosen: Vec<PromptRecord> = sample
        .selected
        .iter()
        .map(|&i| outcome.survivors[i].clone())
        .collect();
    let balanced = Manifest::from_prompts(Stage::Balanced, chosen).unwrap();
    write_manifest(dir.path().join("balanced.jsonl"), &balanced).unwrap();
    let back = read_manifest(dir.path().join("balanced.jsonl")).unwrap();
    assert_eq!(back, balanced);
    assert_eq!(back.stage(), Stage::Balanced);

    let again = hierarchical_sample(&tree, 100, 3, SampleOptions { strict: true }).unwrap();
    assert_eq!(again.selected, sample.selected);
}

#[test]
fn down_scaled_pairing_plan() {
    let styles: Vec<u64> = (0..1_700u64)
        .map(|i| megacurate_core::record_id("s", i))
        .collect();
    let contents: Vec<u64> = (0..4_000u64)
        .map(|i| megacurate_core::record_id("c", i))
        .collect();
    let config = PairingConfig {
        n_contents_per_style: 8,
        ..PairingConfig::default()
    };
    let combos = make_combinations(&styles, &contents, &config).unwrap();
    assert_eq!(combos.len(), 13_600);
    let ids: HashSet<u64> = combos.iter().map(|c| c.combination_id).collect();
    assert_eq!(ids.len(), 13_600);
    let mut per_style: HashMap<u64, HashSet<u64>> = HashMap::new();
    for c in &combos {
        per_style
            .entry(c.style_id)
            .or_default()
            .insert(c.content_id);
    }
    assert_eq!(per_style.len(), 1_700);
    assert!(per_style.values().all(|c| c.len() == 8));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    write_manifest(
        &path,
        &Manifest::from_combinations(Stage::Paired, combos.clone()).unwrap(),
    )
    .unwrap();
    assert_eq!(read_manifest(&path).unwrap().len(), 13_600);

    let mut previous = combos.clone();
    previous[0].status = CombinationStatus::Done;
    let plan = resume_plan(
        &previous,
        make_combinations(&styles, &contents, &config).unwrap(),
    );
    assert_eq!(plan.len(), 13_600);
    assert_eq!(
        plan.iter()
            .filter(|c| c.status == CombinationStatus::Done)
            .count(),
        1
    );
}
