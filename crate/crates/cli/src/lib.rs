//! Configuration, subcommands and file formats of the `pnpflux` tool.

// NaN must fail positivity and ordering checks, hence `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod output;
