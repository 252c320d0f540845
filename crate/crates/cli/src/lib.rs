//! Experiment runner around `abstention-core`: dataset generation, ensemble
//! training, evaluation tables, and SVG figures, all driven by a single
//! TOML config (or the built-in per-experiment defaults).

pub mod commands;
pub mod config;
pub mod dataio;
pub mod error;
pub mod runio;
pub mod svg;

pub use commands::{cmd_evaluate, cmd_generate, cmd_reproduce, cmd_train};
pub use config::{ExperimentConfig, ExperimentKind, ModelKind};
pub use error::CliError;
