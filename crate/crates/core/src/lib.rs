//! Curation engine for style datasets: prompt deduplication, hierarchical
//! balanced sampling, content/style pairing, style-supervised contrastive
//! training of a projection head, and style-retrieval metrics.
//!
//! Every stage exchanges data through two on-disk formats: JSONL manifests
//! ([`manifest`]) and the `MGSE` embedding sidecar ([`sidecar`]).

pub mod balance;
pub mod clients;
pub mod dedup;
pub mod error;
pub mod ids;
pub mod manifest;
pub mod pairing;
pub mod record;
pub mod retrieval;
pub mod sidecar;
pub mod sscl;
pub mod vector;

pub use error::{Error, Result};
pub use ids::{fnv1a64, record_id};
pub use manifest::{read_manifest, write_manifest, Manifest, SCHEMA_VERSION};
pub use record::{
    CombinationStatus, GenerationRecord, PromptKind, PromptRecord, Record, Stage, StyleCombination,
    StyleLabel,
};
pub use sidecar::{read_embeddings, write_embeddings};
pub use vector::{cosine_similarity, dot, l2_normalize, EmbeddingMatrix};
