use crate::error::{GradError, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::{strides_of, Tensor};

/// How an operand's elements map onto the broadcast output.
#[derive(Debug, Clone)]
pub(crate) enum Broadcast {
    /// Same shape as the output.
    Same,
    /// Operand equals the trailing dimensions of the output and is tiled.
    Tile(usize),
    /// Arbitrary broadcast; operand offset per output element.
    Map(Vec<usize>),
}

impl Broadcast {
    fn plan(out: &[usize], input: &[usize]) -> Self {
        if out == input {
            return Broadcast::Same;
        }
        let trimmed: Vec<usize> = input.iter().copied().skip_while(|&d| d == 1).collect();
        if out.ends_with(&trimmed) {
            return Broadcast::Tile(trimmed.iter().product());
        }
        // Right-aligned odometer walk; broadcast dims get stride 0.
        let offset = out.len() - input.len();
        let in_strides = strides_of(input);
        let strides: Vec<usize> = (0..out.len())
            .map(|d| {
                if d < offset || input[d - offset] == 1 {
                    0
                } else {
                    in_strides[d - offset]
                }
            })
            .collect();
        let numel: usize = out.iter().product();
        let mut map = Vec::with_capacity(numel);
        let mut idx = vec![0usize; out.len()];
        let mut pos = 0usize;
        for _ in 0..numel {
            map.push(pos);
            for d in (0..out.len()).rev() {
                idx[d] += 1;
                pos += strides[d];
                if idx[d] < out[d] {
                    break;
                }
                pos -= strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        Broadcast::Map(map)
    }

    #[inline]
    fn offset(&self, o: usize) -> usize {
        match self {
            Broadcast::Same => o,
            Broadcast::Tile(n) => o % n,
            Broadcast::Map(m) => m[o],
        }
    }

    /// Sums `g` (output-shaped) down to the operand's shape, scaled per element.
    fn reduce<T: Real>(&self, g: &[T], len: usize, scale: impl Fn(usize) -> T) -> Vec<T> {
        match self {
            Broadcast::Same => g.iter().enumerate().map(|(o, &v)| v * scale(o)).collect(),
            _ => {
                let mut out = vec![T::zero(); len];
                for (o, &v) in g.iter().enumerate() {
                    out[self.offset(o)] += v * scale(o);
                }
                out
            }
        }
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n {
            a[i + a.len() - n]
        } else {
            1
        };
        let db = if i + b.len() >= n {
            b[i + b.len() - n]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(GradError::shape(op, a, b)),
        };
    }
    Ok(out)
}

enum Kind {
    Add,
    Sub,
    Mul,
}

impl<T: Real> Tape<T> {
    fn binary(&mut self, kind: Kind, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let name = match kind {
            Kind::Add => "add",
            Kind::Sub => "sub",
            Kind::Mul => "mul",
        };
        let sa = self.node(ia).value.shape().to_vec();
        let sb = self.node(ib).value.shape().to_vec();
        let out_shape = broadcast_shape(name, &sa, &sb)?;
        let ba = Broadcast::plan(&out_shape, &sa);
        let bb = Broadcast::plan(&out_shape, &sb);
        let (va, vb) = (self.node(ia).value.data(), self.node(ib).value.data());
        let numel: usize = out_shape.iter().product();
        let f = |x: T, y: T| match kind {
            Kind::Add => x + y,
            Kind::Sub => x - y,
            Kind::Mul => x * y,
        };
        let data: Vec<T> = match (&ba, &bb) {
            (Broadcast::Same, Broadcast::Same) => {
                va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
            }
            _ => (0..numel)
                .map(|o| f(va[ba.offset(o)], vb[bb.offset(o)]))
                .collect(),
        };
        let value = Tensor::new(&out_shape, data)?;
        let op = match kind {
            Kind::Add => Op::Add {
                a: ia,
                b: ib,
                ba,
                bb,
            },
            Kind::Sub => Op::Sub {
                a: ia,
                b: ib,
                ba,
                bb,
            },
            Kind::Mul => Op::Mul {
                a: ia,
                b: ib,
                ba,
                bb,
            },
        };
        self.push(value, op, &[ia, ib])
    }

    /// Elementwise `a + b` with trailing-dimension broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Kind::Add, a, b)
    }

    /// Elementwise `a - b` with broadcasting.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Kind::Sub, a, b)
    }

    /// Elementwise `a * b` with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Kind::Mul, a, b)
    }

    /// `factor * x`.
    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let ix = self.index(x)?;
        let value = self.node(ix).value.map(|v| v * factor);
        self.push(value, Op::Scale { x: ix, factor }, &[ix])
    }
}

type Operand<'a> = (usize, &'a Broadcast, usize);

pub(crate) fn add_backward<T: Real>(
    g: &[T],
    (a, ba, la): Operand<'_>,
    (b, bb, lb): Operand<'_>,
    needs: &dyn Fn(usize) -> bool,
) -> Vec<(usize, Vec<T>)> {
    let mut out = Vec::with_capacity(2);
    if needs(a) {
        out.push((a, ba.reduce(g, la, |_| T::one())));
    }
    if needs(b) {
        out.push((b, bb.reduce(g, lb, |_| T::one())));
    }
    out
}

pub(crate) fn sub_backward<T: Real>(
    g: &[T],
    (a, ba, la): Operand<'_>,
    (b, bb, lb): Operand<'_>,
    needs: &dyn Fn(usize) -> bool,
) -> Vec<(usize, Vec<T>)> {
    let mut out = Vec::with_capacity(2);
    if needs(a) {
        out.push((a, ba.reduce(g, la, |_| T::one())));
    }
    if needs(b) {
        out.push((b, bb.reduce(g, lb, |_| -T::one())));
    }
    out
}

pub(crate) fn mul_backward<T: Real>(
    g: &[T],
    (a, ba, va): (usize, &Broadcast, &[T]),
    (b, bb, vb): (usize, &Broadcast, &[T]),
    needs: &dyn Fn(usize) -> bool,
) -> Vec<(usize, Vec<T>)> {
    let mut out = Vec::with_capacity(2);
    if needs(a) {
        out.push((a, ba.reduce(g, va.len(), |o| vb[bb.offset(o)])));
    }
    if needs(b) {
        out.push((b, bb.reduce(g, vb.len(), |o| va[ba.offset(o)])));
    }
    out
}
