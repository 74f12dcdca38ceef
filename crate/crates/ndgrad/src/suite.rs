//! Finite-difference checks for every primitive, at `f64`.
//!
//! Inputs are drawn from the caller's generator and then pushed away from
//! kinks (ReLU at 0, clamp bounds, max-pool ties) so central differences with
//! a small step never straddle one.

use crate::error::Result;
use crate::gradcheck::grad_check;
use crate::primitive::Primitive;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Step used for every primitive check.
pub const STEP: f64 = 1e-5;

struct Gen<'a> {
    uniform: &'a mut dyn FnMut() -> f64,
}

impl Gen<'_> {
    fn tensor(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| 2.0 * (self.uniform)() - 1.0).collect();
        Tensor::new(shape, data).expect("shape and data agree")
    }

    /// Values with magnitude at least `margin`.
    fn away_from_zero(&mut self, shape: &[usize], margin: f64) -> Tensor<f64> {
        self.tensor(shape)
            .map(|v| if v >= 0.0 { v + margin } else { v - margin })
    }

    /// Distinct values spaced at least `gap` apart, in random order.
    fn distinct(&mut self, shape: &[usize], gap: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (((self.uniform)() * (i + 1) as f64) as usize).min(i);
            order.swap(i, j);
        }
        let data = order
            .iter()
            .map(|&k| (k as f64 - n as f64 / 2.0) * gap)
            .collect();
        Tensor::new(shape, data).expect("shape and data agree")
    }
}

/// `sum(w ⊙ y)` for a fixed random `w`, so every output coordinate matters.
fn weighted(tape: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(w.clone());
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

/// Runs [`grad_check`] on each primitive and returns the worst relative
/// error found for it, in catalog order.
pub fn primitive_grad_checks(uniform: &mut dyn FnMut() -> f64) -> Result<Vec<(Primitive, f64)>> {
    let mut g = Gen { uniform };
    let mut out = Vec::new();

    // Binary elementwise ops: x as the full operand and as the broadcast one.
    for prim in [Primitive::Add, Primitive::Sub, Primitive::Mul] {
        let apply = |tape: &mut Tape<f64>, a: Var, b: Var| match prim {
            Primitive::Add => tape.add(a, b),
            Primitive::Sub => tape.sub(a, b),
            _ => tape.mul(a, b),
        };
        let full = g.tensor(&[4, 3]);
        let row = g.tensor(&[3]);
        let col = g.tensor(&[4, 1]);
        let w = g.tensor(&[4, 3]);
        let x = g.tensor(&[4, 3]);
        let e1 = grad_check(
            |t, x| {
                let c = t.constant(row.clone());
                let y = apply(t, x, c)?;
                weighted(t, y, &w)
            },
            &x,
            STEP,
        )?;
        let e2 = grad_check(
            |t, x| {
                let c = t.constant(full.clone());
                let y = apply(t, c, x)?;
                weighted(t, y, &w)
            },
            &g.tensor(&[3]),
            STEP,
        )?;
        let e3 = grad_check(
            |t, x| {
                let c = t.constant(full.clone());
                let y = apply(t, x, c)?;
                weighted(t, y, &w)
            },
            &col,
            STEP,
        )?;
        out.push((prim, e1.max(e2).max(e3)));
    }

    let w = g.tensor(&[3, 5]);
    let e = grad_check(
        |t, x| {
            let y = t.scale(x, -1.7)?;
            weighted(t, y, &w)
        },
        &g.tensor(&[3, 5]),
        STEP,
    )?;
    out.push((Primitive::Scale, e));

    let rhs = g.tensor(&[4, 2]);
    let lhs = g.tensor(&[3, 4]);
    let w = g.tensor(&[3, 2]);
    let e1 = grad_check(
        |t, x| {
            let b = t.constant(rhs.clone());
            let y = t.matmul(x, b)?;
            weighted(t, y, &w)
        },
        &g.tensor(&[3, 4]),
        STEP,
    )?;
    let e2 = grad_check(
        |t, x| {
            let a = t.constant(lhs.clone());
            let y = t.matmul(a, x)?;
            weighted(t, y, &w)
        },
        &g.tensor(&[4, 2]),
        STEP,
    )?;
    out.push((Primitive::MatMul, e1.max(e2)));

    let kernel = g.tensor(&[3, 3, 2, 3]);
    let image = g.tensor(&[2, 5, 6, 2]);
    let w1 = g.tensor(&[2, 3, 3, 3]);
    let w2 = g.tensor(&[2, 5, 6, 3]);
    let e1 = grad_check(
        |t, x| {
            let k = t.constant(kernel.clone());
            let y = t.conv2d(x, k, 2, 1)?;
            weighted(t, y, &w1)
        },
        &image,
        STEP,
    )?;
    let e2 = grad_check(
        |t, x| {
            let i = t.constant(image.clone());
            let y = t.conv2d(i, x, 1, 1)?;
            weighted(t, y, &w2)
        },
        &kernel,
        STEP,
    )?;
    out.push((Primitive::Conv2d, e1.max(e2)));

    let w = g.tensor(&[2, 2, 3, 3]);
    let e = grad_check(
        |t, x| {
            let y = t.max_pool2d(x, 2, 2)?;
            weighted(t, y, &w)
        },
        &g.distinct(&[2, 4, 6, 3], 0.01),
        STEP,
    )?;
    out.push((Primitive::MaxPool2d, e));

    let w = g.tensor(&[2, 3]);
    let e = grad_check(
        |t, x| {
            let y = t.global_avg_pool(x)?;
            weighted(t, y, &w)
        },
        &g.tensor(&[2, 3, 4, 3]),
        STEP,
    )?;
    out.push((Primitive::GlobalAvgPool, e));

    let w = g.tensor(&[3, 4]);
    let e = grad_check(
        |t, x| {
            let y = t.relu(x)?;
            weighted(t, y, &w)
        },
        &g.away_from_zero(&[3, 4], 0.05),
        STEP,
    )?;
    out.push((Primitive::Relu, e));
    let e = grad_check(
        |t, x| {
            let y = t.sigmoid(x)?;
            weighted(t, y, &w)
        },
        &g.tensor(&[3, 4]).map(|v| 4.0 * v),
        STEP,
    )?;
    out.push((Primitive::Sigmoid, e));
    let e = grad_check(
        |t, x| {
            let y = t.softmax(x)?;
            weighted(t, y, &w)
        },
        &g.tensor(&[3, 4]).map(|v| 3.0 * v),
        STEP,
    )?;
    out.push((Primitive::Softmax, e));
    let e = grad_check(
        |t, x| {
            let y = t.log_softmax(x)?;
            weighted(t, y, &w)
        },
        &g.tensor(&[3, 4]).map(|v| 3.0 * v),
        STEP,
    )?;
    out.push((Primitive::LogSoftmax, e));

    let e = grad_check(|t, x| t.sum(x), &g.tensor(&[2, 3, 2]), STEP)?;
    out.push((Primitive::Sum, e));
    let e = grad_check(|t, x| t.mean(x), &g.tensor(&[2, 3, 2]), STEP)?;
    out.push((Primitive::Mean, e));

    let w = g.tensor(&[3, 4]);
    let e = grad_check(
        |t, x| {
            let y = t.reshape(x, &[3, 4])?;
            weighted(t, y, &w)
        },
        &g.tensor(&[2, 6]),
        STEP,
    )?;
    out.push((Primitive::Reshape, e));

    let other = g.tensor(&[2, 2, 3]);
    let w = g.tensor(&[2, 4, 3]);
    let e = grad_check(
        |t, x| {
            let o = t.constant(other.clone());
            let y = t.concat(&[o, x, o], 1)?;
            let y = t.slice(y, 1, 1, 4)?;
            weighted(t, y, &w)
        },
        &g.tensor(&[2, 1, 3]),
        STEP,
    )?;
    out.push((Primitive::Concat, e));
    let w = g.tensor(&[2, 2, 3]);
    let e = grad_check(
        |t, x| {
            let y = t.slice(x, 1, 1, 2)?;
            weighted(t, y, &w)
        },
        &g.tensor(&[2, 4, 3]),
        STEP,
    )?;
    out.push((Primitive::Slice, e));

    let w = g.tensor(&[3, 4]);
    let e = grad_check(
        |t, x| {
            let s = t.sign(x)?;
            let y = t.mul(s, x)?;
            weighted(t, y, &w)
        },
        &g.away_from_zero(&[3, 4], 0.05),
        STEP,
    )?;
    out.push((Primitive::Sign, e));
    // Clamp to [-0.5, 0.5] with inputs kept 0.05 away from both bounds.
    let x = g.tensor(&[3, 4]).map(|v| {
        if (v.abs() - 0.5).abs() < 0.05 {
            v * 0.8
        } else {
            v
        }
    });
    let e = grad_check(
        |t, x| {
            let y = t.clamp(x, -0.5, 0.5)?;
            weighted(t, y, &w)
        },
        &x,
        STEP,
    )?;
    out.push((Primitive::Clamp, e));

    let w = g.tensor(&[4, 3]);
    let e = grad_check(
        |t, x| {
            let y = t.gather_rows(x, &[2, 0, 2, 1])?;
            weighted(t, y, &w)
        },
        &g.tensor(&[3, 3]),
        STEP,
    )?;
    out.push((Primitive::GatherRows, e));
    let w = g.tensor(&[5, 3]);
    let e = grad_check(
        |t, x| {
            let y = t.scatter_rows(x, &[4, 0, 4], 5)?;
            weighted(t, y, &w)
        },
        &g.tensor(&[3, 3]),
        STEP,
    )?;
    out.push((Primitive::ScatterRows, e));

    Ok(out)
}
