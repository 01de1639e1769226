//! Command-line driver: configuration, subcommands and exit codes.

pub mod commands;
pub mod config;
pub mod exit;
