//! Dense loops behind the tape ops. All loops run in a fixed order so results
//! are bit-reproducible on a single thread.
//!
//! Every reduction accumulates in `f64` whatever the element type, so `f32`
//! results are the correctly rounded value of a double-precision sum.

use alloc::vec;
use alloc::vec::Vec;

use super::Scalar;

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (a, o) in acc.iter_mut().zip(row.iter()) {
            *a = o.as_f64();
        }
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            let aik = aik.as_f64();
            for (o, &bv) in acc.iter_mut().zip(b_row) {
                *o += aik * bv.as_f64();
            }
        }
        for (a, o) in acc.iter().zip(row.iter_mut()) {
            *o = T::from_f64(*a);
        }
    }
}

/// `out[m,k] += dc[m,n] · b[k,n]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(dc: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            out[i * k + kk] += dot(dc_row, b_row);
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · dc[m,n]`
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], dc: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let mut acc: Vec<f64> = out[..k * n].iter().map(|v| v.as_f64()).collect();
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let o = &mut acc[kk * n..(kk + 1) * n];
            let aik = aik.as_f64();
            for (ov, &d) in o.iter_mut().zip(dc_row) {
                *ov += aik * d.as_f64();
            }
        }
    }
    for (o, a) in out[..k * n].iter_mut().zip(&acc) {
        *o = T::from_f64(*a);
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four partial sums let the compiler vectorize without reordering
    // across calls; the reduction order is still fixed.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i].as_f64() * b[i].as_f64();
        acc[1] += a[i + 1].as_f64() * b[i + 1].as_f64();
        acc[2] += a[i + 2].as_f64() * b[i + 2].as_f64();
        acc[3] += a[i + 3].as_f64() * b[i + 3].as_f64();
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i].as_f64() * b[i].as_f64();
    }
    T::from_f64(s)
}

/// Sum in input order.
#[inline]
pub(crate) fn sum<T: Scalar>(x: &[T]) -> T {
    T::from_f64(x.iter().fold(0.0, |acc, v| acc + v.as_f64()))
}

/// Adds `Σ_r x[r, j]` over rows of width `dst.len()` into `dst`.
pub(crate) fn add_column_sums<T: Scalar>(dst: &mut [T], x: &[T]) {
    let mut acc: Vec<f64> = dst.iter().map(|v| v.as_f64()).collect();
    for row in x.chunks(dst.len()) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v.as_f64();
        }
    }
    for (d, a) in dst.iter_mut().zip(acc) {
        *d = T::from_f64(a);
    }
}

/// Adds `Σ_r x[r, j] · y[r, j]` over rows of width `dst.len()` into `dst`.
pub(crate) fn add_column_dots<T: Scalar>(dst: &mut [T], x: &[T], y: &[T]) {
    let w = dst.len();
    let mut acc: Vec<f64> = dst.iter().map(|v| v.as_f64()).collect();
    for (xr, yr) in x.chunks(w).zip(y.chunks(w)) {
        for ((a, u), v) in acc.iter_mut().zip(xr).zip(yr) {
            *a += u.as_f64() * v.as_f64();
        }
    }
    for (d, a) in dst.iter_mut().zip(acc) {
        *d = T::from_f64(a);
    }
}

/// Transposes the last two axes of a `[batch, rows, cols]` block.
pub(crate) fn transpose_last2<T: Scalar>(
    x: &[T],
    out: &mut [T],
    batch: usize,
    rows: usize,
    cols: usize,
) {
    let plane = rows * cols;
    for b in 0..batch {
        let src = &x[b * plane..(b + 1) * plane];
        let dst = &mut out[b * plane..(b + 1) * plane];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
}
