//! File formats, configuration, reports and subcommands behind the
//! `semcal` binary.

pub mod commands;
pub mod config;
pub mod io;
pub mod report;
