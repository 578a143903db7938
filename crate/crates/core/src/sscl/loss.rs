//! Loss values and analytic gradients.
//!
//! Features `u_i` are normalized to `z_i = u_i / |u_i|`. The supervised
//! term averages, over anchors with at least one positive,
//! `lse_{a != i}(z_i.z_a / tau) - mean_{p in P(i)} z_i.z_p / tau`. The
//! image-text term is `(1/B^2) sum_ij softplus(-y_ij z_i.t_j)`.

use rayon::prelude::*;

use super::{LabeledBatch, PairingMode, SsclConfig, SsclError, TrainableEncoder};
use crate::vector::{dot, EmbeddingMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SclLoss {
    pub loss: f64,
    /// `None` for anchors without a positive, which are excluded.
    pub per_anchor: Vec<Option<f64>>,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub scl: SclLoss,
    /// Unweighted image-text term.
    pub itc: f64,
    /// `scl + itc_weight * itc`.
    pub total: f64,
    /// Gradient w.r.t. the unnormalized features, row-major `B x d`.
    pub feature_grad: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsclGradient {
    pub objective: Objective,
    /// Gradient w.r.t. the encoder parameters.
    pub grad: Vec<f64>,
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Normalized {
    z: Vec<f64>,
    norms: Vec<f64>,
    dim: usize,
}

impl Normalized {
    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }
}

fn normalize(features: &EmbeddingMatrix) -> Result<Normalized, SsclError> {
    let dim = features.dim();
    let mut z = Vec::with_capacity(features.data().len());
    let mut norms = Vec::with_capacity(features.rows());
    for (i, row) in features.iter_rows().enumerate() {
        let n = dot(row, row).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(SsclError::BadProjection { row: i });
        }
        norms.push(n);
        z.extend(row.iter().map(|v| v / n));
    }
    Ok(Normalized { z, norms, dim })
}

/// Log-sum-exp over `values` skipping index `skip`, either in one pass or
/// streamed over column tiles of width `tile`.
fn lse_excluding(values: &[f64], skip: usize, tile: usize) -> f64 {
    let width = if tile == 0 { values.len().max(1) } else { tile };
    let (mut m, mut s) = (f64::NEG_INFINITY, 0.0f64);
    for (t, chunk) in values.chunks(width).enumerate() {
        let base = t * width;
        let tile_max = chunk
            .iter()
            .enumerate()
            .filter(|(o, _)| base + o != skip)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if tile_max == f64::NEG_INFINITY {
            continue;
        }
        let new_m = m.max(tile_max);
        let tile_sum: f64 = chunk
            .iter()
            .enumerate()
            .filter(|(o, _)| base + o != skip)
            .map(|(_, &v)| (v - new_m).exp())
            .sum();
        s = s * (m - new_m).exp() + tile_sum;
        m = new_m;
    }
    m + s.ln()
}

/// Per-anchor supervised contrastive terms and, optionally, the coefficient
/// matrix `C` with `d loss_i / d z = (1/tau) sum_a C[i][a] * (z_a at z_i, z_i at z_a)`.
fn scl_terms(
    z: &Normalized,
    labels: &[crate::record::StyleLabel],
    tau: f64,
    tile: usize,
    want_coeffs: bool,
) -> Vec<(Option<f64>, Vec<f64>)> {
    let b = labels.len();
    (0..b)
        .into_par_iter()
        .map(|i| {
            let positives: Vec<usize> = (0..b)
                .filter(|&p| p != i && labels[p] == labels[i])
                .collect();
            if positives.is_empty() {
                return (None, Vec::new());
            }
            let zi = z.row(i);
            let sims: Vec<f64> = (0..b).map(|a| dot(zi, z.row(a)) / tau).collect();
            let lse = lse_excluding(&sims, i, tile);
            let inv_p = 1.0 / positives.len() as f64;
            let pos_mean: f64 = positives.iter().map(|&p| sims[p]).sum::<f64>() * inv_p;
            let coeffs = if want_coeffs {
                let mut c: Vec<f64> = sims
                    .iter()
                    .enumerate()
                    .map(|(a, &s)| if a == i { 0.0 } else { (s - lse).exp() })
                    .collect();
                for &p in &positives {
                    c[p] -= inv_p;
                }
                c
            } else {
                Vec::new()
            };
            (Some(lse - pos_mean), coeffs)
        })
        .collect()
}

fn text_columns(batch: &LabeledBatch) -> Vec<&[f64]> {
    batch
        .pair_index
        .iter()
        .map(|&p| batch.text_embeddings.row(p))
        .collect()
}

#[inline]
fn positive_pair(batch: &LabeledBatch, mode: PairingMode, i: usize, j: usize) -> bool {
    match mode {
        PairingMode::Label => batch.labels[i] == batch.labels[j],
        PairingMode::Instance => batch.pair_index[i] == batch.pair_index[j],
    }
}

/// Image-text sigmoid loss and its gradient w.r.t. `z` (row-major).
fn itc_terms(
    z: &Normalized,
    batch: &LabeledBatch,
    mode: PairingMode,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let b = batch.len();
    let texts = text_columns(batch);
    let scale = 1.0 / (b as f64 * b as f64);
    let rows: Vec<(f64, Vec<f64>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let zi = z.row(i);
            let mut sum = 0.0;
            let mut g = if want_grad {
                vec![0.0; z.dim]
            } else {
                Vec::new()
            };
            for (j, t) in texts.iter().enumerate() {
                let y = if positive_pair(batch, mode, i, j) {
                    1.0
                } else {
                    -1.0
                };
                let s = dot(zi, t);
                sum += softplus(-y * s);
                if want_grad {
                    let coef = -y * sigmoid(-y * s) * scale;
                    for (gm, tm) in g.iter_mut().zip(t.iter()) {
                        *gm += coef * tm;
                    }
                }
            }
            (sum, g)
        })
        .collect();
    let loss = rows.iter().map(|r| r.0).sum::<f64>() * scale;
    let grad = want_grad.then(|| rows.into_iter().flat_map(|r| r.1).collect());
    (loss, grad)
}

/// Full objective on precomputed features; with `want_grad`, also the
/// gradient w.r.t. those features.
pub fn objective_and_feature_grad(
    features: &EmbeddingMatrix,
    batch: &LabeledBatch,
    config: &SsclConfig,
    want_grad: bool,
) -> Result<Objective, SsclError> {
    config.check_tau()?;
    batch.validate()?;
    if features.rows() != batch.len() {
        return Err(SsclError::Shape(format!(
            "{} features for {} labels",
            features.rows(),
            batch.len()
        )));
    }
    if batch.text_embeddings.dim() != features.dim() {
        return Err(SsclError::Shape(format!(
            "text dim {} differs from feature dim {}",
            batch.text_embeddings.dim(),
            features.dim()
        )));
    }
    let z = normalize(features)?;
    let b = batch.len();
    let d = z.dim;

    let terms = scl_terms(&z, &batch.labels, config.tau, config.tile_size, want_grad);
    let per_anchor: Vec<Option<f64>> = terms.iter().map(|t| t.0).collect();
    let valid = per_anchor.iter().flatten().count();
    if valid == 0 {
        return Err(SsclError::NoPositives);
    }
    let scl = per_anchor.iter().flatten().sum::<f64>() / valid as f64;
    let (itc, itc_grad) = itc_terms(&z, batch, config.pairing, want_grad);
    let total = scl + config.itc_weight * itc;
    if !total.is_finite() {
        return Err(SsclError::NonFinite { what: "loss" });
    }

    let feature_grad = if want_grad {
        let itc_grad = itc_grad.expect("requested");
        let scale = 1.0 / (config.tau * valid as f64);
        let mut grad = vec![0.0; b * d];
        grad.par_chunks_mut(d.max(1))
            .enumerate()
            .for_each(|(k, gk)| {
                // dL/dz_k from the supervised term
                let mut gz = vec![0.0; d];
                for a in 0..b {
                    let mut c = 0.0;
                    if !terms[k].1.is_empty() {
                        c += terms[k].1[a];
                    }
                    if !terms[a].1.is_empty() {
                        c += terms[a].1[k];
                    }
                    if c != 0.0 {
                        for (g, v) in gz.iter_mut().zip(z.row(a)) {
                            *g += scale * c * v;
                        }
                    }
                }
                for (g, v) in gz.iter_mut().zip(&itc_grad[k * d..(k + 1) * d]) {
                    *g += config.itc_weight * v;
                }
                // back through z = u / |u|
                let zk = z.row(k);
                let radial = dot(&gz, zk);
                let inv_norm = 1.0 / z.norms[k];
                for ((out, g), zm) in gk.iter_mut().zip(&gz).zip(zk) {
                    *out = (g - radial * zm) * inv_norm;
                }
            });
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(SsclError::NonFinite { what: "gradient" });
        }
        Some(grad)
    } else {
        None
    };

    Ok(Objective {
        scl: SclLoss {
            loss: scl,
            excluded: b - valid,
            per_anchor,
        },
        itc,
        total,
        feature_grad,
    })
}

fn encode<E: TrainableEncoder>(
    batch: &LabeledBatch,
    head: &E,
) -> Result<EmbeddingMatrix, SsclError> {
    let u = head.encode(&batch.image_embeddings)?;
    if u.data().iter().any(|v| !v.is_finite()) {
        return Err(SsclError::NonFinite { what: "projection" });
    }
    Ok(u)
}

/// Supervised contrastive term over style labels.
pub fn scl_loss<E: TrainableEncoder>(
    batch: &LabeledBatch,
    head: &E,
    tau: f64,
) -> Result<SclLoss, SsclError> {
    let config = SsclConfig {
        tau,
        ..Default::default()
    };
    let u = encode(batch, head)?;
    let z = normalize(&u)?;
    config.check_tau()?;
    let per_anchor: Vec<Option<f64>> = scl_terms(&z, &batch.labels, tau, 0, false)
        .into_iter()
        .map(|t| t.0)
        .collect();
    let valid = per_anchor.iter().flatten().count();
    if valid == 0 {
        return Err(SsclError::NoPositives);
    }
    let loss = per_anchor.iter().flatten().sum::<f64>() / valid as f64;
    if !loss.is_finite() {
        return Err(SsclError::NonFinite { what: "loss" });
    }
    Ok(SclLoss {
        loss,
        excluded: per_anchor.len() - valid,
        per_anchor,
    })
}

/// Sigmoid image-text term.
pub fn itc_loss<E: TrainableEncoder>(
    batch: &LabeledBatch,
    head: &E,
    pairing: PairingMode,
) -> Result<f64, SsclError> {
    batch.validate()?;
    let u = encode(batch, head)?;
    if batch.text_embeddings.dim() != u.dim() {
        return Err(SsclError::Shape(format!(
            "text dim {} differs from feature dim {}",
            batch.text_embeddings.dim(),
            u.dim()
        )));
    }
    let z = normalize(&u)?;
    let (loss, _) = itc_terms(&z, batch, pairing, false);
    if !loss.is_finite() {
        return Err(SsclError::NonFinite { what: "loss" });
    }
    Ok(loss)
}

/// Combined objective `scl + itc_weight * itc`.
pub fn sscl_loss<E: TrainableEncoder>(
    batch: &LabeledBatch,
    head: &E,
    config: &SsclConfig,
) -> Result<Objective, SsclError> {
    objective_and_feature_grad(&encode(batch, head)?, batch, config, false)
}

/// Combined objective and its gradient w.r.t. the encoder parameters.
pub fn sscl_grad<E: TrainableEncoder>(
    batch: &LabeledBatch,
    head: &E,
    config: &SsclConfig,
) -> Result<SsclGradient, SsclError> {
    let u = encode(batch, head)?;
    let objective = objective_and_feature_grad(&u, batch, config, true)?;
    let grad = head.param_gradient(
        &batch.image_embeddings,
        objective.feature_grad.as_ref().expect("requested"),
    );
    Ok(SsclGradient { objective, grad })
}
