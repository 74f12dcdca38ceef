use crate::error::{GradError, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub batch: usize,
    pub spatial: usize,
    pub channels: usize,
}

impl<T: Real> Tape<T> {
    /// Max pooling over `kernel x kernel` windows of an NHWC batch, no padding.
    /// Ties route the gradient to the first maximum in scan order.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let ix = self.index(x)?;
        let shape = self.node(ix).value.shape().to_vec();
        if shape.len() != 4 {
            return Err(GradError::shape("max_pool2d", &shape, &[kernel, kernel]));
        }
        if kernel == 0 || stride == 0 {
            return Err(GradError::invalid(
                "max_pool2d",
                "kernel and stride must be positive",
            ));
        }
        let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        if kernel > h || kernel > w {
            return Err(GradError::shape("max_pool2d", &shape, &[kernel, kernel]));
        }
        let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let data = self.node(ix).value.data();
        let mut out = Vec::with_capacity(b * oh * ow * c);
        let mut argmax = Vec::with_capacity(b * oh * ow * c);
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best_i = ((bi * h + oy * stride) * w + ox * stride) * c + ch;
                        let mut best = data[best_i];
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let i =
                                    ((bi * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                                if data[i] > best {
                                    best = data[i];
                                    best_i = i;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_i);
                    }
                }
            }
        }
        let value = Tensor::new(&[b, oh, ow, c], out)?;
        self.push(value, Op::MaxPool2d { x: ix, argmax }, &[ix])
    }

    /// Mean over the spatial axes: `[B, H, W, C] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let shape = self.node(ix).value.shape().to_vec();
        if shape.len() != 4 {
            return Err(GradError::invalid(
                "global_avg_pool",
                format!("expected NHWC input, got {shape:?}"),
            ));
        }
        let geom = PoolGeom {
            batch: shape[0],
            spatial: shape[1] * shape[2],
            channels: shape[3],
        };
        let data = self.node(ix).value.data();
        let inv = T::one() / T::of(geom.spatial as f64);
        let mut out = vec![T::zero(); geom.batch * geom.channels];
        for b in 0..geom.batch {
            for s in 0..geom.spatial {
                let src = &data[(b * geom.spatial + s) * geom.channels..][..geom.channels];
                for (o, &v) in out[b * geom.channels..][..geom.channels]
                    .iter_mut()
                    .zip(src)
                {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new(&[geom.batch, geom.channels], out)?;
        self.push(value, Op::GlobalAvgPool { x: ix, geom }, &[ix])
    }
}

pub(crate) fn max_pool_backward<T: Real>(g: &[T], argmax: &[usize], len: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); len];
    for (&i, &v) in argmax.iter().zip(g) {
        gx[i] += v;
    }
    gx
}

pub(crate) fn global_avg_pool_backward<T: Real>(g: &[T], geom: &PoolGeom) -> Vec<T> {
    let inv = T::one() / T::of(geom.spatial as f64);
    let mut gx = Vec::with_capacity(geom.batch * geom.spatial * geom.channels);
    for b in 0..geom.batch {
        let row = &g[b * geom.channels..][..geom.channels];
        for _ in 0..geom.spatial {
            gx.extend(row.iter().map(|&v| v * inv));
        }
    }
    gx
}
