//! Experiment runner for the correlation-imaging simulator: configuration,
//! scenarios, artifact output and the subcommands of the `ghostsim` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod scenario;
