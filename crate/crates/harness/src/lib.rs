//! Experiment runner for the tblab workspace: TOML configuration, suite
//! orchestration, JSON and CSV reports.

pub mod config;
pub mod coverage;
pub mod report;
pub mod suites;

pub use config::ExperimentConfig;
pub use report::{Check, SuiteReport};
pub use suites::run;
