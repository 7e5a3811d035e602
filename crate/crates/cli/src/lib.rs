//! Experiment runner behind the `ssem` binary.

// NaN-rejecting comparisons such as `!(x > 0.0)` are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{Outcome, Which};
pub use config::{RawConfig, RunConfig};
pub use error::{Class, CliError, CliResult};
