//! Dense matrix kernels shared by the operator implementations.
//!
//! Parallel paths split work by output row, so every element is produced by
//! exactly one task with a fixed summation order: results are bit-identical
//! whatever the thread count.

use crate::scalar::Scalar;
use rayon::prelude::*;

/// Below this many multiply-accumulates a kernel stays single-threaded.
const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(orow, arow)| mm_row(arow, b, n, orow));
    } else {
        for (orow, arow) in out.chunks_mut(n).zip(a.chunks(k)) {
            mm_row(arow, b, n, orow);
        }
    }
}

fn mm_row<T: Scalar>(arow: &[T], b: &[T], n: usize, orow: &mut [T]) {
    for (p, &av) in arow.iter().enumerate() {
        let brow = &b[p * n..(p + 1) * n];
        for (o, &bv) in orow.iter_mut().zip(brow) {
            *o += av * bv;
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    matmul_acc(a, b, m, k, n, &mut out);
    out
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ` (dot products of rows against rows).
pub(crate) fn matmul_abt_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(orow, arow)| abt_row(arow, b, k, orow));
    } else {
        for (orow, arow) in out.chunks_mut(n).zip(a.chunks(k)) {
            abt_row(arow, b, k, orow);
        }
    }
}

fn abt_row<T: Scalar>(arow: &[T], b: &[T], k: usize, orow: &mut [T]) {
    for (j, o) in orow.iter_mut().enumerate() {
        let brow = &b[j * k..(j + 1) * k];
        let mut s = T::zero();
        for (&av, &bv) in arow.iter().zip(brow) {
            s += av * bv;
        }
        *o += s;
    }
}

pub(crate) fn matmul_abt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    matmul_abt_acc(a, b, m, k, n, &mut out);
    out
}

/// Row-major transpose of an `rows×cols` matrix.
pub(crate) fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// `out[j] += Σ_i a[i×n + j]` — column sums of an `m×n` matrix.
pub(crate) fn col_sums_acc<T: Scalar>(a: &[T], m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(out.len(), n);
    for row in a.chunks(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let _ = m;
}

/// `y += alpha · x`
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_against_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.1 + 0.5).collect();
        let got = matmul(&a, &b, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                assert!((got[i * n + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn abt_matches_explicit_transpose() {
        let (m, k, n) = (4, 3, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..n * k).map(|i| (i as f64).sin()).collect();
        let bt = transpose(&b, n, k);
        let want = matmul(&a, &bt, m, k, n);
        let got = matmul_abt(&a, &b, m, k, n);
        assert_eq!(got, want);
    }

    #[test]
    fn parallel_path_is_bit_identical_to_serial() {
        // Large enough to trip the parallel threshold.
        let (m, k, n) = (64, 32, 64);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 37 % 101) as f32) * 0.013 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 17 % 97) as f32) * 0.021 - 0.7).collect();
        let par = matmul(&a, &b, m, k, n);
        let mut serial = vec![0.0f32; m * n];
        for (orow, arow) in serial.chunks_mut(n).zip(a.chunks(k)) {
            mm_row(arow, &b, n, orow);
        }
        assert_eq!(par, serial);
    }
}
