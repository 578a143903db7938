//! Command-line pipeline around `megacurate-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod files;
pub mod ledger;
pub mod pipeline;
pub mod stages;

pub use cli::{execute, Cli};
pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, Metrics, RunSummary};
