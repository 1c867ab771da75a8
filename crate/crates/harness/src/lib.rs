//! Experiment harness for dynalign: TOML configs, grid drivers with a
//! worker pool, JSONL run records with aggregates, and pass/fail checks.

pub mod config;
pub mod criteria;
pub mod error;
pub mod experiments;
pub mod records;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use records::{Aggregate, ExperimentRecord, RunRecord};
