//! Scenario files, output formats and commands behind the `cbf-bench` binary.

pub mod commands;
pub mod config;
pub mod output;
