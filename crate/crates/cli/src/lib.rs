//! Command implementations and run configuration behind the `wsc` binary.

pub mod commands;
pub mod config;
pub mod error;
