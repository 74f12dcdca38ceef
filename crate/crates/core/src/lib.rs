//! Class-specific expert mixtures and their robustness evaluation.

// NaN must fail these range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod par;
pub mod selftest;
pub mod train;

pub use error::{CoreError, Result};
