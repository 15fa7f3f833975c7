//! Config loading and subcommands behind the `roughfilm` binary.

pub mod commands;
pub mod config;
