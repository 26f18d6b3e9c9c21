//! Sampling client, simulator driver and analysis commands for OCC in-band
//! power sensor images.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod plot;
pub mod source;
pub mod trace;

pub use cli::{run_cli, run_cli_with};
pub use error::CliError;
