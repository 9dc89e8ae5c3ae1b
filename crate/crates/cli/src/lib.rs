//! Command-line front end: configuration, CSV and SVG output, subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;
