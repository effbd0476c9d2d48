//! Experiments, data ingestion, file formats and the command line built on
//! [`hmmcp_core`].
//!
//! - [`experiments`]: seeded Monte-Carlo coverage runs and grid sweeps
//! - [`ingest`]: CSV series, state quantization and backtests
//! - [`io`]: augmented-sequence files and prediction reports
//! - [`config`]: `key = value` configuration files
//! - [`cli`]: the `hmmcp` command

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod io;

pub use error::{Error, Result};
pub use hmmcp_core;
