//! File formats, dataset layout, configuration and subcommands for the
//! `car` command-line tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod image;
pub mod obj;
pub mod records;

pub use error::{CarError, Result};
