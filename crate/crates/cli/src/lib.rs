//! Command-line front end for the multi-fidelity optimizer.
//!
//! A run is described by one TOML file ([`config::RunConfig`]). Every seed
//! writes its own directory with an append-only `events.jsonl`, a versioned
//! CBOR `checkpoint.bin` refreshed after each iteration, and `trace.csv`.
//! Run-level summaries go to `report.csv`.

pub mod commands;
pub mod config;
pub mod report;
pub mod store;

pub use commands::{cmd_compare, cmd_report, cmd_resume, cmd_run, CliError, CompareOutcome, RunOptions};
pub use config::{Overrides, RunConfig};
