//! Stages of the FOV extension pipeline.

pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod stages;

pub use error::{CliError, CliResult, Kind};
