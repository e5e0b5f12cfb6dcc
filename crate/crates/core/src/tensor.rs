//! Numeric element trait and the matrix product every layer is built on.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2, ArrayViewMut2, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;

/// Floating-point element used by the networks. Training runs in `f32`; gradient checks
/// instantiate the same code at `f64`.
pub trait Scalar:
    Float + LinalgScalar + ScalarOperand + Send + Sync + Debug + Default + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Rows per independent block of a matrix product. Fixed so that the blocking, and with it
/// every rounding decision, is the same whether or not blocks run on separate threads.
const GEMM_ROW_BLOCK: usize = 16;

/// Below this many multiply-adds the product runs as a single block.
const GEMM_PARALLEL_MIN_WORK: usize = 1 << 16;

/// `c = a · b` (or `c += a · b` when `accumulate`).
pub fn gemm<F: Scalar>(a: ArrayView2<F>, b: ArrayView2<F>, mut c: ArrayViewMut2<F>, accumulate: bool) {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), c.nrows());
    debug_assert_eq!(b.ncols(), c.ncols());
    let beta = if accumulate { F::one() } else { F::zero() };
    let work = a.nrows() * a.ncols() * b.ncols();
    if work < GEMM_PARALLEL_MIN_WORK || a.nrows() <= GEMM_ROW_BLOCK {
        blocked(a, b, c.view_mut(), beta);
        return;
    }
    let jobs: Vec<(ArrayView2<F>, ArrayViewMut2<F>)> = a
        .axis_chunks_iter(Axis(0), GEMM_ROW_BLOCK)
        .zip(c.axis_chunks_iter_mut(Axis(0), GEMM_ROW_BLOCK))
        .collect();
    crate::par::for_each_owned(jobs, |(a_blk, c_blk)| blocked(a_blk, b, c_blk, beta));
}

fn blocked<F: Scalar>(a: ArrayView2<F>, b: ArrayView2<F>, mut c: ArrayViewMut2<F>, beta: F) {
    for (a_blk, mut c_blk) in a
        .axis_chunks_iter(Axis(0), GEMM_ROW_BLOCK)
        .zip(c.axis_chunks_iter_mut(Axis(0), GEMM_ROW_BLOCK))
    {
        general_mat_mul(F::one(), &a_blk, &b, beta, &mut c_blk);
    }
}

/// Allocating convenience wrapper around [`gemm`].
pub fn matmul<F: Scalar>(a: ArrayView2<F>, b: ArrayView2<F>) -> Array2<F> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    gemm(a, b, c.view_mut(), false);
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn naive(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut c = Array2::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut s = 0.0;
                for k in 0..a.ncols() {
                    s += a[[i, k]] * b[[k, j]];
                }
                c[[i, j]] = s;
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_product_on_large_and_small_shapes() {
        for &(m, k, n) in &[(3, 4, 5), (70, 33, 90), (17, 128, 64)] {
            let a = Array::from_shape_fn((m, k), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
            let b = Array::from_shape_fn((k, n), |(i, j)| ((i * 5 + j) % 13) as f64 * 0.25);
            let c = matmul(a.view(), b.view());
            let r = naive(&a, &b);
            assert!(c.iter().zip(r.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }

    #[test]
    fn accumulate_adds_into_existing_values() {
        let a = Array2::<f32>::ones((2, 3));
        let b = Array2::<f32>::ones((3, 2));
        let mut c = Array2::<f32>::from_elem((2, 2), 1.0);
        gemm(a.view(), b.view(), c.view_mut(), true);
        assert!(c.iter().all(|&v| v == 4.0));
    }
}
