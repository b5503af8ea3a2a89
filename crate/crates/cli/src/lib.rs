//! Experiment harness: configuration, synthetic scenarios, the pipeline
//! commands and their manifests.

// `!(x > 0.0)` guards double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;
pub mod scenario;

pub use commands::{em_fit, evaluate, oracle, reconstruct, simulate, RunOptions};
pub use config::{ExperimentConfig, Scenario};
pub use manifest::RunManifest;
