//! Experiment runner for `odefilt`: forward solves, inference runs, Jacobian
//! checks and step-size or likelihood-surface sweeps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use app::run_cli;
pub use error::CliError;
