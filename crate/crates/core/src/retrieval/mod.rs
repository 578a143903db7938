//! Style-retrieval splits and ranking metrics.

mod metrics;
mod split;

use thiserror::Error;

pub use metrics::{
    average_precision_at_k, evaluate, map_at_k, rank_gallery, recall_at_k, MetricReport,
    RankedResult, StyleMetrics,
};
pub use split::{build_split, read_split, write_split, RetrievalSplit, SplitItem, SplitRole};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("style {label} has {count} item(s); need more than {needed}")]
    UnderpopulatedStyle {
        label: u32,
        count: usize,
        needed: usize,
    },
    #[error("{items} items but {labels} labels")]
    LengthMismatch { items: usize, labels: usize },
    #[error("dimension mismatch: query {query}, gallery {gallery}")]
    DimensionMismatch { query: usize, gallery: usize },
    #[error("item {id} is both a query and a gallery item")]
    Overlap { id: u64 },
    #[error("duplicate item id {id}")]
    DuplicateId { id: u64 },
    #[error("embedding row {row} out of range ({rows} rows)")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("empty gallery")]
    EmptyGallery,
    #[error("no scorable queries")]
    NoQueries,
    #[error("split file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Core(#[from] crate::Error),
}
