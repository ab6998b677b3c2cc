//! Library surface of the command-line driver, exposed so integration tests
//! can run subcommands in-process.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod table;
