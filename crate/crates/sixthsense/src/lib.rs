//! File formats, reports, the experiment pipeline and the command-line tool
//! built on [`sixthsense_core`].

pub mod checkpoint;
pub mod commands;
pub mod episode_io;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod report;

pub use error::{Error, Result};
