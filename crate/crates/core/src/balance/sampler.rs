use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, BalanceError, ClusterTree};

fn capped_sum(sizes: &[usize], n: usize) -> usize {
    sizes.iter().map(|&s| s.min(n)).sum()
}

/// Smallest `n` minimizing `|budget - sum_j min(n, s_j)|`.
///
/// The capped sum is strictly increasing in `n` up to `max(sizes)` and flat
/// afterwards, so the answer is either the first `n` whose capped sum reaches
/// the budget or the one just below it; ties go to the smaller `n`.
pub fn compute_shared_cap(sizes: &[usize], budget: usize) -> Result<usize, BalanceError> {
    let max = *sizes.iter().max().ok_or(BalanceError::EmptySizes)?;
    if capped_sum(sizes, max) <= budget {
        return Ok(max);
    }
    // smallest n in [0, max] with capped_sum(n) >= budget
    let (mut lo, mut hi) = (0usize, max);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if capped_sum(sizes, mid) >= budget {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let over = capped_sum(sizes, lo) - budget;
    if lo > 0 && budget - capped_sum(sizes, lo - 1) <= over {
        Ok(lo - 1)
    } else {
        Ok(lo)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Also resolve the top-level residual so exactly `budget` items are drawn.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    /// Selected item indices, ascending.
    pub selected: Vec<usize>,
    pub budget: usize,
    /// `selected.len() - budget`.
    pub residual: i64,
    /// Items drawn from each lowest-level cluster.
    pub leaf_allocations: Vec<usize>,
}

/// Shared-cap allocation of `budget` over clusters of the given sizes. With
/// `exact`, the cap residual is resolved one item at a time: uniformly chosen
/// under-capped clusters gain an item, or capped clusters lose one.
fn allocate(
    sizes: &[usize],
    budget: usize,
    exact: bool,
    rng_seed: u64,
) -> Result<Vec<usize>, BalanceError> {
    if budget == 0 {
        return Ok(vec![0; sizes.len()]);
    }
    let cap = compute_shared_cap(sizes, budget)?;
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| s.min(cap)).collect();
    if exact {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut total: usize = alloc.iter().sum();
        while total < budget {
            let open: Vec<usize> = (0..sizes.len()).filter(|&j| alloc[j] < sizes[j]).collect();
            if open.is_empty() {
                break;
            }
            alloc[open[rng.random_range(0..open.len())]] += 1;
            total += 1;
        }
        while total > budget {
            let capped: Vec<usize> = (0..sizes.len())
                .filter(|&j| alloc[j] == cap && cap > 0)
                .collect();
            alloc[capped[rng.random_range(0..capped.len())]] -= 1;
            total -= 1;
        }
    }
    Ok(alloc)
}

/// Top-down shared-cap sampling.
///
/// The budget is split over the top-level clusters with one shared cap;
/// each cluster's allocation then becomes the budget for a shared cap over
/// its own children (per sibling group), down to the lowest level where
/// items are drawn uniformly without replacement.
///
/// Below the top level every node realizes its budget exactly, so the only
/// deviation from `budget` is the top-level cap granularity, at most the
/// number of top-level clusters. It is reported in
/// [`SampleOutcome::residual`]; `strict` resolves it as well.
pub fn hierarchical_sample(
    tree: &ClusterTree,
    budget: usize,
    seed: u64,
    options: SampleOptions,
) -> Result<SampleOutcome, BalanceError> {
    if budget == 0 || budget > tree.items {
        return Err(BalanceError::Budget {
            budget,
            total: tree.items,
        });
    }
    let depth = tree.levels.len();
    let top = tree.top();
    let mut budgets = allocate(
        &top.sizes,
        budget,
        options.strict,
        derive_seed(seed, u64::MAX),
    )?;
    for level in (0..depth).rev() {
        let lvl = &tree.levels[level];
        for (c, (&b, &s)) in budgets.iter().zip(&lvl.sizes).enumerate() {
            if b > s {
                return Err(BalanceError::Infeasible {
                    level,
                    cluster: c,
                    allocated: b,
                    size: s,
                });
            }
        }
        if level == 0 {
            break;
        }
        let below = &tree.levels[level - 1];
        let mut next = vec![0usize; below.len()];
        for (c, children) in lvl.children.iter().enumerate() {
            let child_sizes: Vec<usize> = children.iter().map(|&ch| below.sizes[ch]).collect();
            let stream = ((level as u64) << 40) ^ c as u64;
            let alloc = allocate(&child_sizes, budgets[c], true, derive_seed(seed, stream))?;
            for (&ch, a) in children.iter().zip(alloc) {
                next[ch] = a;
            }
        }
        budgets = next;
    }

    let leaves = &tree.levels[0];
    let mut selected = Vec::with_capacity(budget);
    for (c, members) in leaves.children.iter().enumerate() {
        let take = budgets[c];
        if take == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
        selected.extend(
            index::sample(&mut rng, members.len(), take)
                .into_iter()
                .map(|i| members[i]),
        );
    }
    selected.sort_unstable();
    Ok(SampleOutcome {
        residual: selected.len() as i64 - budget as i64,
        selected,
        budget,
        leaf_allocations: budgets,
    })
}
