use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{BalanceError, KMeansConfig};
use crate::vector::EmbeddingMatrix;

/// Points per partial sum; the reduction order over chunks is fixed.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: EmbeddingMatrix,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centroids.rows()];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &EmbeddingMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
    let n = points.rows();
    let mut chosen = vec![false; n];
    let mut picks = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    picks.push(first);
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first)))
        .collect();
    while picks.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target at the very end of the cumulative sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            // every remaining point coincides with a center
            chosen.iter().position(|&c| !c).expect("k <= rows")
        };
        chosen[next] = true;
        picks.push(next);
        let c = points.row(next);
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = sq_dist(points.row(i), c);
            if nd < *d {
                *d = nd;
            }
        });
    }
    let mut data = Vec::with_capacity(k * points.dim());
    for p in picks {
        data.extend_from_slice(points.row(p));
    }
    EmbeddingMatrix::new(k, points.dim(), data).expect("shape")
}

/// Means of assigned points, accumulated per fixed-size chunk and reduced in
/// chunk order. Clusters with no members keep their previous centroid.
fn update_centroids(
    points: &EmbeddingMatrix,
    assignments: &[usize],
    prev: &EmbeddingMatrix,
) -> EmbeddingMatrix {
    let k = prev.rows();
    let dim = points.dim();
    let partials: Vec<(Vec<f64>, Vec<usize>)> = assignments
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (off, &a) in chunk.iter().enumerate() {
                let p = points.row(ci * CHUNK + off);
                counts[a] += 1;
                for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                    *s += v;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (ps, pc) in partials {
        for (s, v) in sums.iter_mut().zip(ps) {
            *s += v;
        }
        for (c, v) in counts.iter_mut().zip(pc) {
            *c += v;
        }
    }
    for c in 0..k {
        let row = &mut sums[c * dim..(c + 1) * dim];
        if counts[c] == 0 {
            row.copy_from_slice(prev.row(c));
        } else {
            let n = counts[c] as f64;
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    EmbeddingMatrix::new(k, dim, sums).expect("shape")
}

/// Moves each empty cluster's centroid onto the point farthest from its own
/// centroid, taking only points whose cluster keeps at least one member.
fn repair_empty(
    points: &EmbeddingMatrix,
    centroids: &mut EmbeddingMatrix,
    assignments: &mut [usize],
    dists: &mut [f64],
) {
    let k = centroids.rows();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] != 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in dists.iter().enumerate() {
            if counts[assignments[i]] >= 2 && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("rows >= k guarantees a donor cluster");
        counts[assignments[i]] -= 1;
        counts[empty] = 1;
        assignments[i] = empty;
        dists[i] = 0.0;
        centroids.row_mut(empty).copy_from_slice(points.row(i));
    }
}

fn fixed_order_sum(values: &[f64]) -> f64 {
    let partials: Vec<f64> = values.par_chunks(CHUNK).map(|c| c.iter().sum()).collect();
    partials.into_iter().sum()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops after `config.max_iters` assignment steps or once the relative
/// inertia improvement drops below `config.tol`. The returned centroids are
/// the means of the returned assignment.
pub fn lloyd_kmeans(
    points: &EmbeddingMatrix,
    k: usize,
    config: &KMeansConfig,
) -> Result<KMeansResult, BalanceError> {
    if k == 0 {
        return Err(BalanceError::ZeroK);
    }
    if k > points.rows() {
        return Err(BalanceError::TooFewPoints {
            k,
            rows: points.rows(),
        });
    }
    if let Err(crate::Error::NonFinite { row }) = points.check_finite() {
        return Err(BalanceError::NonFinite { row });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut trace: Vec<f64> = Vec::new();
    let max_iters = config.max_iters.max(1);
    let mut assignments;
    loop {
        let (mut assign, mut dists): (Vec<usize>, Vec<f64>) = (0..points.rows())
            .into_par_iter()
            .map(|i| nearest(points.row(i), &centroids))
            .unzip();
        repair_empty(points, &mut centroids, &mut assign, &mut dists);
        let inertia = fixed_order_sum(&dists);
        let converged = match trace.last() {
            Some(&prev) => prev <= 0.0 || (prev - inertia) <= config.tol * prev,
            None => inertia == 0.0,
        };
        trace.push(inertia);
        centroids = update_centroids(points, &assign, &centroids);
        assignments = assign;
        if converged || trace.len() >= max_iters {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia_trace: trace,
    })
}
