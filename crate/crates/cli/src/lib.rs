//! Configuration-driven experiment pipeline: phantom data generation, shape-model
//! construction, regressor pretraining, joint training, detection, evaluation and reports.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use pipeline::{Command, Run, METHODS};
