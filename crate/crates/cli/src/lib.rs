//! Command-line pipeline around `fvv-core`: scene synthesis, streaming
//! encode, decode, render and per-frame metrics.

pub mod commands;
pub mod error;
pub mod plot;
pub mod stream;

pub use error::{CliError, Result};
