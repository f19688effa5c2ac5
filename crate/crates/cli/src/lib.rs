//! Experiment runner for `csl-core`: named experiments driven by JSON
//! configs, deterministic seeds, CSV/JSON outputs and a built-in acceptance
//! suite.

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod output;

pub use config::{resolve, Experiment, RunConfig};
pub use experiments::{run, Check, Report};
