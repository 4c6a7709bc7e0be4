//! Scalar abstraction shared by every numeric module.
//!
//! All models, losses and integrators are written against [`Scalar`], which is
//! implemented for `f32` and `f64`. The dense kernel used by the batched
//! trainer is a trait method so each float width can route to its own BLAS-like
//! routine.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Strided read-only view of a row-major (or transposed) matrix.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a, T: Copy> MatRef<'a, T> {
    /// Row-major `rows x cols` view.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transposed view, without copying.
    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[(r as isize * self.row_stride + c as isize * self.col_stride) as usize]
    }
}

/// Floating-point scalar used throughout the crate.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    /// `out = beta * out + a * b` where `out` is row-major `a.rows x b.cols`.
    fn gemm(a: MatRef<'_, Self>, b: MatRef<'_, Self>, beta: Self, out: &mut [Self]) {
        naive_gemm(a, b, beta, out)
    }
}

/// Reference triple-loop product; the oracle for the fast kernels.
pub fn naive_gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, n) = (a.rows, b.cols);
    assert!(out.len() >= m * n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..a.cols {
                acc += a.at(i, p) * b.at(p, j);
            }
            let o = &mut out[i * n + j];
            *o = if beta == T::zero() { acc } else { beta * *o + acc };
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(a: MatRef<'_, Self>, b: MatRef<'_, Self>, beta: Self, out: &mut [Self]) {
                assert_eq!(a.cols, b.rows, "inner dimensions differ");
                let (m, k, n) = (a.rows, a.cols, b.cols);
                assert!(out.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for o in &mut out[..m * n] {
                        *o *= beta;
                    }
                    return;
                }
                // SAFETY: views were bounds-checked on construction, strides describe
                // in-bounds elements for every (row, col) pair, and `out` holds m*n values.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.data.as_ptr(),
                        a.row_stride,
                        a.col_stride,
                        b.data.as_ptr(),
                        b.row_stride,
                        b.col_stride,
                        beta,
                        out.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
