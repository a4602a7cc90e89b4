//! Batch commands and the live annotation service behind the `caipi` binary.

pub mod error;
pub mod output;
pub mod run;
pub mod service;
pub mod store;

pub use error::CliError;
