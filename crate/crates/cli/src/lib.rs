//! Configuration, dispatch and artifact writing for the `glesim` binary.

pub mod commands;
pub mod config;
pub mod output;
