//! File formats, pipeline stages and the command-line front end for
//! `minset-core`.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod format;
pub mod pipeline;
