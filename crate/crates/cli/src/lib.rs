//! Config-driven experiment runner: every analysis the core provides is
//! exposed as a CLI subcommand writing CSV/JSON artifacts plus a manifest.

pub mod config;
pub mod experiments;
pub mod output;
pub mod pipeline;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, Experiment, PipelineError};
