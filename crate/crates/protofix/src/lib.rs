//! File formats, reporting, CLI and HTTP service around `protofix-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod pemb;
pub mod report;
pub mod service;
pub mod store_doc;

pub use error::{Error, Result};
