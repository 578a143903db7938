//! Style-supervised contrastive learning over a trainable encoder.
//!
//! The objective is a supervised contrastive term over style labels plus a
//! sigmoid image-text term against frozen style-prompt embeddings. The
//! encoder boundary is [`TrainableEncoder`]; [`ProjectionHead`] is the
//! linear implementation trained here on precomputed image embeddings.

mod head;
mod loss;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::StyleLabel;
use crate::vector::EmbeddingMatrix;

pub use head::{ProjectionHead, TrainableEncoder};
pub use loss::{
    itc_loss, objective_and_feature_grad, scl_loss, sscl_grad, sscl_loss, Objective, SclLoss,
    SsclGradient,
};
pub use train::{build_batches, train_head, TrainOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum SsclError {
    #[error("invalid sscl config: {0}")]
    Config(String),
    #[error("batch shape: {0}")]
    Shape(String),
    #[error("text embeddings must be unit-norm")]
    TextNotNormalized,
    #[error("projected feature {row} is zero or non-finite")]
    BadProjection { row: usize },
    #[error("no anchor in the batch has a same-label positive")]
    NoPositives,
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("style {label} has {count} sample(s); training needs at least 2")]
    UnderpopulatedStyle { label: u32, count: usize },
    #[error("loss diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
}

/// How image rows are matched to text columns in the image-text term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Positive whenever the two rows share a style label.
    #[default]
    Label,
    /// Positive only when both rows point to the same text row.
    Instance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsclConfig {
    pub tau: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Samples per style drawn together when building a batch.
    pub group_size: usize,
    pub itc_weight: f64,
    pub pairing: PairingMode,
    /// Column tile width for the similarity pass; 0 processes rows whole.
    pub tile_size: usize,
    pub seed: u64,
}

impl Default for SsclConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lr: 5e-4,
            weight_decay: 0.01,
            epochs: 30,
            batch_size: 16,
            group_size: 2,
            itc_weight: 1.0,
            pairing: PairingMode::Label,
            tile_size: 0,
            seed: 7,
        }
    }
}

impl SsclConfig {
    pub fn diagnostics(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            out.push(("tau", format!("must be > 0, got {}", self.tau)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(("lr", format!("must be > 0, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(("weight_decay", "must be >= 0".to_string()));
        }
        if self.epochs == 0 {
            out.push(("epochs", "must be at least 1".to_string()));
        }
        if self.group_size < 2 {
            out.push(("group_size", "must be at least 2".to_string()));
        }
        if self.batch_size < self.group_size.max(2) {
            out.push((
                "batch_size",
                "must hold at least one style group".to_string(),
            ));
        }
        if !(self.itc_weight >= 0.0 && self.itc_weight.is_finite()) {
            out.push(("itc_weight", "must be >= 0".to_string()));
        }
        out
    }

    fn check_tau(&self) -> Result<(), SsclError> {
        if self.tau > 0.0 && self.tau.is_finite() {
            Ok(())
        } else {
            Err(SsclError::Config(format!(
                "tau must be > 0, got {}",
                self.tau
            )))
        }
    }
}

/// Image embeddings with style labels and, per image, the row of its
/// style prompt in `text_embeddings`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub image_embeddings: EmbeddingMatrix,
    pub text_embeddings: EmbeddingMatrix,
    pub labels: Vec<StyleLabel>,
    pub pair_index: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(
        image_embeddings: EmbeddingMatrix,
        text_embeddings: EmbeddingMatrix,
        labels: Vec<StyleLabel>,
        pair_index: Vec<usize>,
    ) -> Result<Self, SsclError> {
        let b = Self {
            image_embeddings,
            text_embeddings,
            labels,
            pair_index,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<(), SsclError> {
        let rows = self.image_embeddings.rows();
        if self.labels.len() != rows || self.pair_index.len() != rows {
            return Err(SsclError::Shape(format!(
                "{rows} images, {} labels, {} pair indices",
                self.labels.len(),
                self.pair_index.len()
            )));
        }
        if let Some(&bad) = self
            .pair_index
            .iter()
            .find(|&&p| p >= self.text_embeddings.rows())
        {
            return Err(SsclError::Shape(format!(
                "pair index {bad} out of range for {} text rows",
                self.text_embeddings.rows()
            )));
        }
        if self.text_embeddings.rows() > 0 && !self.text_embeddings.is_normalized() {
            return Err(SsclError::TextNotNormalized);
        }
        Ok(())
    }

    /// Sub-batch over the given image rows; text rows are shared.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            image_embeddings: self
                .image_embeddings
                .select_rows(rows)
                .expect("rows in range"),
            text_embeddings: self.text_embeddings.clone(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            pair_index: rows.iter().map(|&r| self.pair_index[r]).collect(),
        }
    }
}
