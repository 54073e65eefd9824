//! File formats, experiment protocols and the command-line front end for
//! neighborhood-relational encoding.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod pgm;
pub mod report;

pub use error::{Error, FormatError, Result};
