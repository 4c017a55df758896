//! Run directories, file formats and the command line around `vct-core`.

#![allow(clippy::type_complexity)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod rundir;
pub mod svg;

pub use config::RunConfig;
pub use error::{CliError, Result};
