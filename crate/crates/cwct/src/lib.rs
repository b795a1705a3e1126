//! File formats, subcommands and benchmark harness around [`cwct_core`].

pub mod commands;
pub mod config_file;
pub mod container;
pub mod error;
pub mod features;
pub mod tables;

pub use cwct_core as core;
pub use error::{CliError, FormatError, Problem};
