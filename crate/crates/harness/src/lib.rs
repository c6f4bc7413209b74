//! Experiment harness for `geoinfer`: configs and presets, replicate
//! orchestration, aggregation, and bit-stable export.

pub mod aggregate;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod export;

pub use aggregate::{fit_rate_slope, summarize, RateFit, Summary};
pub use config::{ExperimentConfig, ExperimentKind, Preset};
pub use experiment::{run_experiment, ExperimentOutput, ExperimentRecord};
pub use export::{export_results, Format};
