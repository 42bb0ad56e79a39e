//! Experiment harness: configs, drivers, reports, and the curated
//! verification suite.
//!
//! The pieces compose in one direction: a [`config::ExperimentConfig`]
//! describes a run, [`run::run_experiment`] executes it deterministically
//! and returns a [`report::ExperimentReport`] of typed check rows, and
//! [`verify`] strings curated runs together into the full pass/fail
//! scoreboard the CLI and the acceptance tests share.

pub mod config;
pub mod report;
pub mod run;
pub mod verify;

pub use config::{ExperimentConfig, ExperimentKind, TolerancePolicy};
pub use report::{CheckRow, ExperimentReport};
pub use run::run_experiment;
