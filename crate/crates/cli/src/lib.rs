//! Config-driven experiment runner: `run`, `timing-bench` and `compare`.

pub mod compare;
pub mod config;
pub mod run;
pub mod timing;

pub use config::ExperimentConfig;
