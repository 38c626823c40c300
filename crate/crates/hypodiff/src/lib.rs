//! Configuration, file formats and the replication harness around
//! `hypodiff-core`. The `hypodiff` binary is a thin layer over this crate.

pub mod config;
pub mod experiments;
pub mod io;

pub use config::{ConfigError, EstimatorKind, ExperimentConfig, Protocol};
pub use experiments::{run_replication_study, summarize, StudyOutput, SummaryTable};
