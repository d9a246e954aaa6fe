//! Simultaneous multi-step robust model predictive control driven by a
//! multi-horizon quantile forecaster.

// `!(a < b)` checks double as NaN rejection; index loops mirror the matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod forecaster;
pub mod mpc;
pub mod pipeline;
pub mod plant;
pub mod seed;
pub mod training;
pub mod tube;

pub use error::{Error, Result};
