//! Theory-driven active learning of one-shot topology generators.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod active_learning;
pub mod config;
pub mod density;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod generator;
pub mod io;
pub mod kkt;
pub mod metrics;
pub mod problem;
pub mod setting;
pub mod solver;

pub use error::{Error, Result};
