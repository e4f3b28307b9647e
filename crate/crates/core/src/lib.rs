//! Multi-sensor extended-object tracking of vehicles with a labeled
//! multi-Bernoulli filter and a reference-point measurement model.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod error;
pub mod experiment;
pub mod gate;
pub mod geometry;
pub mod likelihood;
pub mod lmb;
pub mod metrics;
pub mod mixture;
pub mod motion;
pub mod sim;

pub use error::{Error, Result};
