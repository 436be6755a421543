//! Experiment harness for `mselab-core`: configuration, runs, and artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod manifest;
pub mod output;
pub mod runs;

pub use config::ExperimentConfig;
pub use manifest::{OutputRecord, RunManifest};
pub use output::emit_plot_data;
pub use runs::{run_convergence_study, run_pipeline, RateRow, RateTable};
