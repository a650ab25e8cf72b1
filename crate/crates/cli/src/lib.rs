//! Orchestration of the llmemb pipeline: configuration, stage manifests and
//! the stage runners behind the `llmemb` binary.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::CliError;
pub use pipeline::{Outcome, Pipeline, Stage};
