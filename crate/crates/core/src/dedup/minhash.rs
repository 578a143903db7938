//! MinHash signatures over token shingles.
//!
//! Permutations are simulated with universal hashes
//! `h_i(x) = (a_i x + b_i) mod (2^61 - 1)`, parameters drawn from a seeded
//! ChaCha stream so signatures are reproducible across runs and machines.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{normalize_text, DedupConfig, DedupError};
use crate::ids::fnv1a64;

const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature(pub Vec<u64>);

impl Signature {
    /// Fraction of matching positions.
    pub fn estimated_jaccard(&self, other: &Signature) -> f64 {
        let n = self.0.len().min(other.0.len());
        if n == 0 {
            return 0.0;
        }
        let matches = self.0.iter().zip(&other.0).filter(|(a, b)| a == b).count();
        matches as f64 / n as f64
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Hashed token shingles of the normalized text. Texts with fewer than
/// `shingle_size` tokens produce a single whole-text shingle.
pub fn shingles(text: &str, shingle_size: usize) -> HashSet<u64> {
    let norm = normalize_text(text);
    let tokens: Vec<&str> = norm.split(' ').filter(|t| !t.is_empty()).collect();
    let k = shingle_size.max(1);
    if tokens.len() < k {
        return std::iter::once(hash_tokens(&tokens)).collect();
    }
    tokens.windows(k).map(hash_tokens).collect()
}

fn hash_tokens(tokens: &[&str]) -> u64 {
    // unit separator between tokens keeps ["ab","c"] apart from ["a","bc"]
    let mut buf = Vec::with_capacity(tokens.iter().map(|t| t.len() + 1).sum());
    for t in tokens {
        buf.extend_from_slice(t.as_bytes());
        buf.push(0x1f);
    }
    fnv1a64(&buf)
}

/// Exact Jaccard similarity of two texts' shingle sets.
pub fn exact_jaccard(a: &str, b: &str, shingle_size: usize) -> f64 {
    let sa = shingles(a, shingle_size);
    let sb = shingles(b, shingle_size);
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone)]
pub struct MinHasher {
    shingle_size: usize,
    params: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(config: &DedupConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = (0..config.num_hashes)
            .map(|_| {
                (
                    rng.random_range(1..MERSENNE_61),
                    rng.random_range(0..MERSENNE_61),
                )
            })
            .collect();
        Self {
            shingle_size: config.shingle_size,
            params,
        }
    }

    pub fn num_hashes(&self) -> usize {
        self.params.len()
    }

    pub fn signature(&self, text: &str) -> Option<Signature> {
        if normalize_text(text).is_empty() {
            return None;
        }
        let sh = shingles(text, self.shingle_size);
        let mut sig = vec![u64::MAX; self.params.len()];
        for x in sh {
            let x = x % MERSENNE_61;
            for (slot, &(a, b)) in sig.iter_mut().zip(&self.params) {
                let h = mod_mersenne(u128::from(a) * u128::from(x) + u128::from(b));
                if h < *slot {
                    *slot = h;
                }
            }
        }
        Some(Signature(sig))
    }
}

#[inline]
fn mod_mersenne(v: u128) -> u64 {
    let p = u128::from(MERSENNE_61);
    let folded = (v & p) + (v >> 61);
    let folded = (folded & p) + (folded >> 61);
    let r = folded as u64;
    if r >= MERSENNE_61 {
        r - MERSENNE_61
    } else {
        r
    }
}

/// Signature of one text under `config`.
pub fn minhash_signature(text: &str, config: &DedupConfig) -> Result<Signature, DedupError> {
    MinHasher::new(config)
        .signature(text)
        .ok_or(DedupError::EmptyText(0))
}
