//! Command-line front end: argument parsing and validation, and the
//! pipelines behind each subcommand.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod config;
pub mod pipeline;

pub use config::{parse_config, CliError, Command, PlantSource, RunConfig};
pub use pipeline::run_pipeline;
