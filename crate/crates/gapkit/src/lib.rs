//! File formats, experiment harness and command-line front end for
//! [`gapkit_core`].

pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod synth;
pub mod threads;

pub use error::{CliError, CliResult};
