//! Command-line front end for the vine-copula risk engine: configuration,
//! panel ingestion, worker pools and artifact output.

pub mod app;
pub mod config;
pub mod error;
pub mod panel;
pub mod report;

pub use error::{CliError, CliResult};
