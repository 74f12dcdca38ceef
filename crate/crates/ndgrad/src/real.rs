use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::Float;

/// Floating point element type of a [`Tensor`](crate::Tensor).
///
/// Implemented for `f32` (training precision) and `f64` (gradient checking).
pub trait Real:
    Float
    + LinalgScalar
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn next_up(self) -> Self;
    fn next_down(self) -> Self;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn next_up(self) -> Self {
        f32::next_up(self)
    }
    #[inline]
    fn next_down(self) -> Self {
        f32::next_down(self)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn next_up(self) -> Self {
        f64::next_up(self)
    }
    #[inline]
    fn next_down(self) -> Self {
        f64::next_down(self)
    }
}

/// Row-major matrix view: either `[rows, cols]` as stored, or the transpose
/// of a stored `[cols, rows]` buffer.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T: Real> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// The transpose of a stored `[rows, cols]` buffer.
    pub fn t(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows: cols,
            cols: rows,
            transposed: true,
        }
    }

    fn view(&self) -> ArrayView2<'a, T> {
        if self.transposed {
            ArrayView2::from_shape((self.cols, self.rows), self.data)
                .expect("matrix buffer length")
                .reversed_axes()
        } else {
            ArrayView2::from_shape((self.rows, self.cols), self.data).expect("matrix buffer length")
        }
    }
}

/// `out (+)= a · b` with `out` row-major `[a.rows, b.cols]`.
pub(crate) fn gemm<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>, out: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.cols, b.rows);
    let mut c = ArrayViewMut2::from_shape((a.rows, b.cols), out).expect("output buffer length");
    let beta = if accumulate { T::one() } else { T::zero() };
    general_mat_mul(T::one(), &a.view(), &b.view(), beta, &mut c);
}
