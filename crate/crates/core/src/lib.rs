//! Correlation-network analysis of a stock market: rolling-window
//! cross-correlations, maximum-correlation asset trees, an industry grouping
//! coefficient, and removal of a lagged external index's influence.

// Negated float comparisons are used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corrnet;
pub mod error;
pub mod grouping;
pub mod ingest;
pub mod pipeline;
pub mod returns;
pub mod synth;

pub use error::{Error, Result};
