use crate::error::{GradError, Result};
use crate::real::{gemm, Mat, Real};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// NHWC input, `[kh, kw, c_in, c_out]` kernel, cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub c_out: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c_in
    }
}

/// Unfolds input patches into a `[batch*out_h*out_w, kh*kw*c_in]` matrix,
/// zero-filling the padding.
fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.rows() * patch];
    let mut row = 0;
    for b in 0..g.batch {
        let image = &x[b * g.height * g.width * g.c_in..];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        let src = (iy as usize * g.width + ix as usize) * g.c_in;
                        let off = (ky * g.kw + kx) * g.c_in;
                        dst[off..off + g.c_in].copy_from_slice(&image[src..src + g.c_in]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the input.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch();
    let mut x = vec![T::zero(); g.batch * g.height * g.width * g.c_in];
    let mut row = 0;
    for b in 0..g.batch {
        let base = b * g.height * g.width * g.c_in;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        let dst = base + (iy as usize * g.width + ix as usize) * g.c_in;
                        let off = (ky * g.kw + kx) * g.c_in;
                        for c in 0..g.c_in {
                            x[dst + c] += src[off + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

impl<T: Real> Tape<T> {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (sa, sb) = (self.node(ia).value.shape(), self.node(ib).value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(GradError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            Mat::new(self.node(ia).value.data(), m, k),
            Mat::new(self.node(ib).value.data(), k, n),
            &mut out,
            false,
        );
        let value = Tensor::new(&[m, n], out)?;
        self.push(
            value,
            Op::MatMul {
                a: ia,
                b: ib,
                m,
                k,
                n,
            },
            &[ia, ib],
        )
    }

    /// 2-D convolution (cross-correlation) of an NHWC batch with a
    /// `[kh, kw, c_in, c_out]` kernel, zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (ix, iw) = (self.index(x)?, self.index(w)?);
        let (sx, sw) = (self.node(ix).value.shape(), self.node(iw).value.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[3] != sw[2] {
            return Err(GradError::shape("conv2d", sx, sw));
        }
        if stride == 0 {
            return Err(GradError::invalid("conv2d", "stride must be positive"));
        }
        let (h, wd) = (sx[1] + 2 * pad, sx[2] + 2 * pad);
        if sw[0] > h || sw[1] > wd {
            return Err(GradError::shape("conv2d", sx, sw));
        }
        let geom = ConvGeom {
            batch: sx[0],
            height: sx[1],
            width: sx[2],
            c_in: sx[3],
            kh: sw[0],
            kw: sw[1],
            c_out: sw[3],
            stride,
            pad,
            out_h: (h - sw[0]) / stride + 1,
            out_w: (wd - sw[1]) / stride + 1,
        };
        let cols = im2col(self.node(ix).value.data(), &geom);
        let mut out = vec![T::zero(); geom.rows() * geom.c_out];
        gemm(
            Mat::new(&cols, geom.rows(), geom.patch()),
            Mat::new(self.node(iw).value.data(), geom.patch(), geom.c_out),
            &mut out,
            false,
        );
        let value = Tensor::new(&[geom.batch, geom.out_h, geom.out_w, geom.c_out], out)?;
        // The unfolded input is only needed to differentiate w.r.t. the kernel.
        let cols = if self.node(iw).needs_grad {
            cols
        } else {
            Vec::new()
        };
        self.push(
            value,
            Op::Conv2d {
                x: ix,
                w: iw,
                cols,
                geom,
            },
            &[ix, iw],
        )
    }
}

pub(crate) fn matmul_backward<T: Real>(
    g: &[T],
    (a, va): (usize, &[T]),
    (b, vb): (usize, &[T]),
    (m, k, n): (usize, usize, usize),
    needs: &dyn Fn(usize) -> bool,
) -> Vec<(usize, Vec<T>)> {
    let mut out = Vec::with_capacity(2);
    if needs(a) {
        let mut ga = vec![T::zero(); m * k];
        gemm(Mat::new(g, m, n), Mat::t(vb, k, n), &mut ga, false);
        out.push((a, ga));
    }
    if needs(b) {
        let mut gb = vec![T::zero(); k * n];
        gemm(Mat::t(va, m, k), Mat::new(g, m, n), &mut gb, false);
        out.push((b, gb));
    }
    out
}

pub(crate) fn conv2d_backward<T: Real>(
    g: &[T],
    x: usize,
    (w, vw): (usize, &[T]),
    cols: &[T],
    geom: &ConvGeom,
    needs: &dyn Fn(usize) -> bool,
) -> Vec<(usize, Vec<T>)> {
    let (rows, patch) = (geom.rows(), geom.patch());
    let mut out = Vec::with_capacity(2);
    if needs(x) {
        let mut gcols = vec![T::zero(); rows * patch];
        gemm(
            Mat::new(g, rows, geom.c_out),
            Mat::t(vw, patch, geom.c_out),
            &mut gcols,
            false,
        );
        out.push((x, col2im(&gcols, geom)));
    }
    if needs(w) {
        let mut gw = vec![T::zero(); patch * geom.c_out];
        gemm(
            Mat::t(cols, rows, patch),
            Mat::new(g, rows, geom.c_out),
            &mut gw,
            false,
        );
        out.push((w, gw));
    }
    out
}
