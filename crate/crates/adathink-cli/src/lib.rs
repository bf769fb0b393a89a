//! IO layer and command implementations for the `adathink` binary:
//! rollout record ingestion, configuration resolution, report emission,
//! and the five subcommands (`score`, `difficulty`, `select`, `aes`,
//! `simulate`).

pub mod commands;
pub mod config;
pub mod ingest;
pub mod report;
