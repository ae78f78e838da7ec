// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod fed;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod server;
pub mod transport;

pub use error::{Error, Result};
