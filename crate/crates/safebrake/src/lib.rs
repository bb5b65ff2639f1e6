//! Command-line front end for the `safebrake-core` scenario engine:
//! scenario files, single runs, seeded sweeps and their output tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod clock;
pub mod config;
pub mod error;
pub mod output;
pub mod sweep;

pub use error::{AppError, Result};
