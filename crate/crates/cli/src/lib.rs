//! Experiment runner for the `langevin-core` laboratory.
//!
//! An experiment is a TOML file (see [`config::ExperimentConfig`]). A run
//! validates the whole file first, then executes the configured stages and
//! writes CSV, JSONL and binary outputs plus a `manifest.json` listing every
//! file with its SHA-256. Plot scripts and cross-run comparisons work from
//! manifests alone.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod compare;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plots;
pub mod run;

pub use compare::{compare_runs, Comparison};
pub use config::ExperimentConfig;
pub use error::LabError;
pub use manifest::RunManifest;
pub use plots::emit_plots;
pub use run::{output_root, run_experiment, OUTPUT_ROOT_ENV};
