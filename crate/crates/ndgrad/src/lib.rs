//! Minimal reverse-mode automatic differentiation over dense real tensors.
//!
//! A [`Tape`] records one forward pass as a list of primitive applications
//! (see [`primitive_set`]); [`Tape::backward`] replays it in reverse to
//! produce gradients for every leaf created with `requires_grad`.
//!
//! ```
//! use ndgrad::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap().with_grad(true));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

// NaN must fail these range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
#[doc(hidden)]
pub mod fault;
mod gradcheck;
pub mod loss;
mod ops;
mod primitive;
mod real;
pub mod suite;
mod tape;
mod tensor;

pub use error::{GradError, Result};
pub use gradcheck::grad_check;
pub use primitive::{primitive_set, Primitive};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Plain (tape-free) numeric helpers shared with the rest of the workspace.
pub mod ops_util {
    pub use crate::ops::activation_util::{log_sum_exp, sigmoid, sign, softmax_in_place};
}
