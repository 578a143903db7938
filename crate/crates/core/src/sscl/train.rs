use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sscl_grad, LabeledBatch, SsclConfig, SsclError, TrainableEncoder};
use crate::balance::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome<E> {
    pub head: E,
    /// Mean batch objective per epoch.
    pub history: Vec<f64>,
    /// Anchors excluded for lack of positives, summed over all steps.
    pub excluded_anchors: usize,
    pub steps: usize,
}

/// Row indices of one epoch's batches.
///
/// Each style's samples are shuffled and cut into groups of `group_size`
/// (a trailing singleton joins the previous group), groups are shuffled,
/// and batches are filled group by group up to `batch_size`. Every style in
/// a batch therefore has at least two samples there.
pub fn build_batches(
    labels: &[crate::record::StyleLabel],
    config: &SsclConfig,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64));
    let mut by_label: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_label.entry(l.0).or_default().push(i);
    }
    let group = config.group_size.max(2);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for mut members in by_label.into_values() {
        if members.len() < 2 {
            continue;
        }
        members.shuffle(&mut rng);
        let mut chunks: Vec<Vec<usize>> = members.chunks(group).map(<[usize]>::to_vec).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
            let tail = chunks.pop().expect("non-empty");
            chunks.last_mut().expect("non-empty").extend(tail);
        }
        groups.extend(chunks);
    }
    groups.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for g in groups {
        if !current.is_empty() && current.len() + g.len() > config.batch_size {
            batches.push(std::mem::take(&mut current));
        }
        current.extend(g);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Mini-batch SGD with decoupled weight decay:
/// `w <- w * (1 - lr * weight_decay) - lr * grad`.
pub fn train_head<E: TrainableEncoder + Clone>(
    dataset: &LabeledBatch,
    initial: E,
    config: &SsclConfig,
) -> Result<TrainOutcome<E>, SsclError> {
    // lr = 0 is allowed here so a run can be replayed as a no-op
    if let Some((field, msg)) = config
        .diagnostics()
        .into_iter()
        .find(|(field, _)| !(*field == "lr" && config.lr == 0.0))
    {
        return Err(SsclError::Config(format!("{field}: {msg}")));
    }
    dataset.validate()?;
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for l in &dataset.labels {
        *counts.entry(l.0).or_default() += 1;
    }
    if let Some((&label, &count)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(SsclError::UnderpopulatedStyle { label, count });
    }

    let mut head = initial;
    let decay = 1.0 - config.lr * config.weight_decay;
    let mut history = Vec::with_capacity(config.epochs);
    let mut excluded = 0;
    let mut steps = 0;
    for epoch in 0..config.epochs {
        let batches = build_batches(&dataset.labels, config, epoch);
        let mut sum = 0.0;
        for (step, rows) in batches.iter().enumerate() {
            let batch = dataset.subset(rows);
            let g = match sscl_grad(&batch, &head, config) {
                Ok(g) => g,
                Err(SsclError::NonFinite { .. }) => {
                    return Err(SsclError::Diverged { epoch, step })
                }
                Err(e) => return Err(e),
            };
            sum += g.objective.total;
            excluded += g.objective.scl.excluded;
            for (w, gw) in head.params_mut().iter_mut().zip(&g.grad) {
                *w = *w * decay - config.lr * gw;
            }
            if head.params().iter().any(|w| !w.is_finite()) {
                return Err(SsclError::Diverged { epoch, step });
            }
            steps += 1;
        }
        history.push(sum / batches.len().max(1) as f64);
    }
    Ok(TrainOutcome {
        head,
        history,
        excluded_anchors: excluded,
        steps,
    })
}
