use crate::error::{GradError, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// `(outer, axis extent, inner)` split of a shape around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.index(x)?;
        let value = self.node(ix).value.reshaped(shape)?.with_grad(false);
        self.push(value, Op::Reshape { x: ix }, &[ix])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(GradError::invalid("concat", "no inputs"));
        }
        let inputs: Vec<usize> = xs.iter().map(|&v| self.index(v)).collect::<Result<_>>()?;
        let first = self.node(inputs[0]).value.shape().to_vec();
        if axis >= first.len() {
            return Err(GradError::invalid(
                "concat",
                format!("axis {axis} out of range for {first:?}"),
            ));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &i in &inputs {
            let s = self.node(i).value.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(GradError::shape("concat", &first, s));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = split(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &i in &inputs {
                let v = &self.node(i).value;
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(&out_shape, data)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.clone(),
                axis,
            },
            &inputs,
        )
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ix = self.index(x)?;
        let shape = self.node(ix).value.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(GradError::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, extent, inner) = split(&shape, axis);
        let src = self.node(ix).value.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, data)?;
        self.push(value, Op::Slice { x: ix, axis, start }, &[ix])
    }

    /// Selects rows (axis 0) by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let ix = self.index(x)?;
        let shape = self.node(ix).value.shape().to_vec();
        if shape.is_empty() || rows.is_empty() || rows.iter().any(|&r| r >= shape[0]) {
            return Err(GradError::invalid(
                "gather_rows",
                format!("rows {rows:?} for shape {shape:?}"),
            ));
        }
        let inner: usize = shape[1..].iter().product();
        let src = self.node(ix).value.data();
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&src[r * inner..(r + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        let value = Tensor::new(&out_shape, data)?;
        self.push(
            value,
            Op::GatherRows {
                x: ix,
                rows: rows.to_vec(),
            },
            &[ix],
        )
    }

    /// Inverse of [`Tape::gather_rows`]: places row `i` of `x` at output row
    /// `rows[i]` of a zero tensor with `total_rows` rows, summing collisions.
    pub fn scatter_rows(&mut self, x: Var, rows: &[usize], total_rows: usize) -> Result<Var> {
        let ix = self.index(x)?;
        let shape = self.node(ix).value.shape().to_vec();
        if shape.is_empty() || rows.len() != shape[0] || rows.iter().any(|&r| r >= total_rows) {
            return Err(GradError::invalid(
                "scatter_rows",
                format!("rows {rows:?} into {total_rows} rows for shape {shape:?}"),
            ));
        }
        let inner: usize = shape[1..].iter().product();
        let src = self.node(ix).value.data();
        let mut data = vec![T::zero(); total_rows * inner];
        for (i, &r) in rows.iter().enumerate() {
            for (d, &s) in data[r * inner..(r + 1) * inner]
                .iter_mut()
                .zip(&src[i * inner..])
            {
                *d += s;
            }
        }
        let mut out_shape = shape;
        out_shape[0] = total_rows;
        let value = Tensor::new(&out_shape, data)?;
        self.push(
            value,
            Op::ScatterRows {
                x: ix,
                rows: rows.to_vec(),
            },
            &[ix],
        )
    }
}

pub(crate) fn concat_backward<T: Real>(
    tape: &Tape<T>,
    g: &[T],
    inputs: &[usize],
    axis: usize,
    out_shape: &[usize],
) -> Vec<(usize, Vec<T>)> {
    let (outer, _, inner) = split(out_shape, axis);
    let mut grads: Vec<Vec<T>> = inputs
        .iter()
        .map(|&i| Vec::with_capacity(tape.node(i).value.numel()))
        .collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (k, &i) in inputs.iter().enumerate() {
            let chunk = tape.node(i).value.shape()[axis] * inner;
            grads[k].extend_from_slice(&g[pos..pos + chunk]);
            pos += chunk;
        }
    }
    inputs.iter().copied().zip(grads).collect()
}

pub(crate) fn slice_backward<T: Real>(
    g: &[T],
    in_shape: &[usize],
    axis: usize,
    start: usize,
    out_shape: &[usize],
) -> Vec<T> {
    let (outer, extent, inner) = split(in_shape, axis);
    let len = out_shape[axis];
    let mut gx = vec![T::zero(); in_shape.iter().product()];
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    gx
}

pub(crate) fn gather_rows_backward<T: Real>(g: &[T], rows: &[usize], in_shape: &[usize]) -> Vec<T> {
    let inner: usize = in_shape[1..].iter().product();
    let mut gx = vec![T::zero(); in_shape.iter().product()];
    for (i, &r) in rows.iter().enumerate() {
        for (d, &s) in gx[r * inner..(r + 1) * inner]
            .iter_mut()
            .zip(&g[i * inner..])
        {
            *d += s;
        }
    }
    gx
}

pub(crate) fn scatter_rows_backward<T: Real>(
    g: &[T],
    rows: &[usize],
    in_shape: &[usize],
) -> Vec<T> {
    let inner: usize = in_shape[1..].iter().product();
    let mut gx = Vec::with_capacity(rows.len() * inner);
    for &r in rows {
        gx.extend_from_slice(&g[r * inner..(r + 1) * inner]);
    }
    gx
}
