//! File formats, workflows and the command-line front end around
//! `spatialgeo-core`.

pub mod checkpoint_io;
pub mod cli;
pub mod config;
pub mod error;
pub mod image;
pub mod pipeline;
pub mod records;
pub mod report;
pub mod validate;

pub use error::{Error, ExitCode, Result};
