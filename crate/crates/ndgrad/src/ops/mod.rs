mod activation;
pub(crate) mod activation_util {
    pub use super::activation::{log_sum_exp, sigmoid, sign, softmax_in_place};
}
mod elementwise;
mod linalg;
mod pool;
mod reduce;
mod shape;

pub(crate) use elementwise::Broadcast;
pub(crate) use linalg::ConvGeom;
pub(crate) use pool::PoolGeom;

use crate::real::Real;
use crate::tape::{Op, Tape};

/// Gradient contributions `(input node, d loss / d input)` of node `index`
/// given its upstream gradient.
pub(crate) fn backward<T: Real>(tape: &Tape<T>, index: usize, g: &[T]) -> Vec<(usize, Vec<T>)> {
    let node = tape.node(index);
    let needs = |i: usize| tape.node(i).needs_grad;
    let value = |i: usize| tape.node(i).value.data();
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add { a, b, ba, bb } => elementwise::add_backward(
            g,
            (*a, ba, value(*a).len()),
            (*b, bb, value(*b).len()),
            &needs,
        ),
        Op::Sub { a, b, ba, bb } => elementwise::sub_backward(
            g,
            (*a, ba, value(*a).len()),
            (*b, bb, value(*b).len()),
            &needs,
        ),
        Op::Mul { a, b, ba, bb } => {
            elementwise::mul_backward(g, (*a, ba, value(*a)), (*b, bb, value(*b)), &needs)
        }
        Op::Scale { x, factor } => vec![(*x, g.iter().map(|&v| v * *factor).collect())],
        Op::MatMul { a, b, m, k, n } => {
            linalg::matmul_backward(g, (*a, value(*a)), (*b, value(*b)), (*m, *k, *n), &needs)
        }
        Op::Conv2d { x, w, cols, geom } => {
            linalg::conv2d_backward(g, *x, (*w, value(*w)), cols, geom, &needs)
        }
        Op::MaxPool2d { x, argmax } => {
            vec![(*x, pool::max_pool_backward(g, argmax, value(*x).len()))]
        }
        Op::GlobalAvgPool { x, geom } => vec![(*x, pool::global_avg_pool_backward(g, geom))],
        Op::Relu { x } => vec![(*x, activation::relu_backward(g, value(*x)))],
        Op::Sigmoid { x } => vec![(*x, activation::sigmoid_backward(g, node.value.data()))],
        Op::Softmax { x } => vec![(
            *x,
            activation::softmax_backward(g, node.value.data(), last_dim(&node.value)),
        )],
        Op::LogSoftmax { x } => vec![(
            *x,
            activation::log_softmax_backward(g, node.value.data(), last_dim(&node.value)),
        )],
        Op::Sum { x } => vec![(*x, vec![g[0]; value(*x).len()])],
        Op::Mean { x } => {
            let n = value(*x).len();
            vec![(*x, vec![g[0] / T::of(n as f64); n])]
        }
        Op::Reshape { x } => vec![(*x, g.to_vec())],
        Op::Concat { inputs, axis } => {
            shape::concat_backward(tape, g, inputs, *axis, node.value.shape())
        }
        Op::Slice { x, axis, start } => {
            vec![(
                *x,
                shape::slice_backward(
                    g,
                    tape.node(*x).value.shape(),
                    *axis,
                    *start,
                    node.value.shape(),
                ),
            )]
        }
        Op::Sign { x } => vec![(*x, vec![T::zero(); g.len()])],
        Op::Clamp { x, lo, hi } => vec![(*x, activation::clamp_backward(g, value(*x), *lo, *hi))],
        Op::GatherRows { x, rows } => vec![(
            *x,
            shape::gather_rows_backward(g, rows, tape.node(*x).value.shape()),
        )],
        Op::ScatterRows { x, rows } => vec![(
            *x,
            shape::scatter_rows_backward(g, rows, tape.node(*x).value.shape()),
        )],
    }
}

fn last_dim<T: Real>(t: &crate::Tensor<T>) -> usize {
    t.shape().last().copied().unwrap_or(1)
}
