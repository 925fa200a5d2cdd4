//! Pipeline command implementations behind the `specdyn` binary, exposed
//! as a library so integration and acceptance tests can drive them
//! in-process.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod trajfile;

pub use config::RunConfig;
pub use error::{CliError, Result};
