//! Batch experiments for sparse ARD: declarative JSON configs in, per-trial
//! CSV records, aggregate statistics and a JSON sidecar out.

pub mod config;
pub mod experiments;
pub mod problems;
pub mod records;
pub mod table;

pub use config::{ConfigError, ExperimentConfig, Plan};
pub use experiments::run_experiment;
pub use problems::build_linear_problem;
pub use records::{emit_results, read_records, ResultBundle, TrialRecord};
