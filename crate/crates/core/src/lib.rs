//! Grid-frequency security analysis for high-DPV power systems.
//!
//! The crate ingests electricity-market dispatch data, computes ESS-to-DPV
//! vulnerability metrics, simulates grid frequency under DPV loss / hike
//! attacks with inertia and contingency response, ranks attack windows, and
//! forecasts vulnerable periods with a bagged regression-tree ensemble.
//!
//! Each capability has a runnable example under `examples/`; the `gridsec`
//! binary exposes the same pipeline as batch subcommands.

// `!(x > 0.0)` is used throughout to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod commands;
pub mod config;
pub mod error;
pub mod forecast;
pub mod freqsim;
pub mod market_data;
pub mod metrics;
pub mod reference;
pub mod synthetic;

pub use error::{Error, Result};
