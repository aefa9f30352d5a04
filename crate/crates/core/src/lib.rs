//! Incremental-passivity regularized Leaky-ReLU regression networks, with
//! certified bounds on how far a constant input perturbation can move the
//! output, and a hill-climbing adversary that tests those bounds.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod par;
pub mod passivity;
pub mod report;
pub mod search;
pub mod training;

pub use error::{Error, Result};
