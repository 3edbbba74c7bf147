//! Synthetic homophone corpus, on-disk formats, run configuration, and
//! the training/evaluation driver behind the `vhot` command.

pub mod binio;
pub mod cli;
pub mod corpus;
mod error;
pub mod manifest;
pub mod pipeline;
pub mod runconfig;

pub use error::{HarnessError, Result};
