//! Adaptive robust CLF-CBF quadratic-program control for control-affine
//! systems with time-varying, state-dependent uncertainty.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acc;
pub mod bounds;
pub mod certificates;
pub mod controllers;
pub mod error;
pub mod estimator;
pub mod invariants;
pub mod model;
pub mod qp;
pub mod simulator;

pub use error::{Error, Result};
