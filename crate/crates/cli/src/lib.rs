//! Benchmark harness for the `latact` library: config, protocols, result
//! tables and the `latact` command line.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod protocols;
pub mod tables;

pub use commands::{execute, Cli, Command, CommonArgs};
pub use config::{BenchConfig, EvaluationSpec, Protocol};
pub use error::{CliError, CliResult};
pub use tables::{emit_tables, Table};
