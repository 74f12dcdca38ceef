use crate::error::{GradError, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};

impl<T: Real> Tape<T> {
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let value = self
            .node(ix)
            .value
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu { x: ix }, &[ix])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let value = self.node(ix).value.map(sigmoid);
        self.push(value, Op::Sigmoid { x: ix }, &[ix])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let mut value = self.node(ix).value.clone().with_grad(false);
        let n = row_len(value.shape());
        for row in value.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(value, Op::Softmax { x: ix }, &[ix])
    }

    /// Log-softmax over the last axis, computed stably.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let mut value = self.node(ix).value.clone().with_grad(false);
        let n = row_len(value.shape());
        for row in value.data_mut().chunks_mut(n) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(value, Op::LogSoftmax { x: ix }, &[ix])
    }

    /// Elementwise sign (0 at 0). Its derivative is taken as zero everywhere.
    pub fn sign(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let value = self.node(ix).value.map(sign);
        self.push(value, Op::Sign { x: ix }, &[ix])
    }

    /// Clamp to `[lo, hi]`; gradient passes straight through inside the
    /// interval and is zero outside it.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        if lo > hi {
            return Err(GradError::invalid(
                "clamp",
                format!("empty interval [{lo}, {hi}]"),
            ));
        }
        let ix = self.index(x)?;
        let value = self.node(ix).value.map(|v| v.max(lo).min(hi));
        self.push(value, Op::Clamp { x: ix, lo, hi }, &[ix])
    }
}

fn row_len(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v = *v / sum);
}

pub(crate) fn relu_backward<T: Real>(g: &[T], x: &[T]) -> Vec<T> {
    g.iter()
        .zip(x)
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

pub(crate) fn sigmoid_backward<T: Real>(g: &[T], y: &[T]) -> Vec<T> {
    g.iter()
        .zip(y)
        .map(|(&g, &y)| g * y * (T::one() - y))
        .collect()
}

pub(crate) fn softmax_backward<T: Real>(g: &[T], y: &[T], n: usize) -> Vec<T> {
    let mut gx = Vec::with_capacity(g.len());
    for (gr, yr) in g.chunks(n).zip(y.chunks(n)) {
        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
        gx.extend(gr.iter().zip(yr).map(|(&g, &y)| y * (g - dot)));
    }
    gx
}

pub(crate) fn log_softmax_backward<T: Real>(g: &[T], out: &[T], n: usize) -> Vec<T> {
    let mut gx = Vec::with_capacity(g.len());
    for (gr, or) in g.chunks(n).zip(out.chunks(n)) {
        let total: T = gr.iter().copied().sum();
        gx.extend(gr.iter().zip(or).map(|(&g, &o)| g - o.exp() * total));
    }
    gx
}

pub(crate) fn clamp_backward<T: Real>(g: &[T], x: &[T], lo: T, hi: T) -> Vec<T> {
    g.iter()
        .zip(x)
        .map(|(&g, &x)| if x >= lo && x <= hi { g } else { T::zero() })
        .collect()
}
