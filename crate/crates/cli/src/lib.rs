//! Command-line frontend for the gcpairs library: CSV datasets in, a JSON
//! result bundle plus plot-ready CSV exports out. All numerics live in the
//! library crate; everything here is parsing, plumbing, and serialization.

pub mod bundle;
pub mod commands;
pub mod error;
pub mod io;

pub use error::{CliError, Result};
