//! Seeded fixtures shared by the benchmarks.

use megacurate_core::record::StyleLabel;
use megacurate_core::vector::{l2_normalize, EmbeddingMatrix};
use megacurate_core::{PromptKind, PromptRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit_rows(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = EmbeddingMatrix::new(
        rows,
        dim,
        (0..rows * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .expect("shape");
    l2_normalize(&m).expect("non-zero rows")
}

/// `n` prompts of 30 random words, every tenth a near copy of its predecessor.
pub fn prompts(n: usize, seed: u64) -> Vec<PromptRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut texts: Vec<Vec<String>> = Vec::with_capacity(n);
    for i in 0..n {
        let words = if i % 10 == 9 {
            let mut w = texts[i - 1].clone();
            w.push("again".into());
            w
        } else {
            (0..30)
                .map(|_| {
                    (0..6)
                        .map(|_| rng.random_range(b'a'..=b'z') as char)
                        .collect()
                })
                .collect()
        };
        texts.push(words);
    }
    texts
        .iter()
        .enumerate()
        .map(|(i, w)| {
            PromptRecord::new(PromptKind::Style, w.join(" "), "bench", i as u64)
                .with_embedding_row(i as u64)
        })
        .collect()
}

/// Labels cycling over `styles` classes.
pub fn labels(n: usize, styles: u32) -> Vec<StyleLabel> {
    (0..n).map(|i| StyleLabel(i as u32 % styles)).collect()
}
