//! Command line runner: configuration, experiment orchestration and result files.

pub mod cli;
pub mod commands;
pub mod config;
pub mod simulate;
pub mod verify;
