//! Dense matrix kernels used by the tape.
//!
//! The parallel split is over output rows; each output element is a single
//! sequential dot product, so results do not depend on thread count.

use crate::par;

/// `out[n, m] = a[n, k] * b[m, k]^T`
pub fn matmul_nt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), m * k);
    debug_assert_eq!(out.len(), n * m);
    par::for_each_row(out, m, |i, row| {
        let ai = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let bj = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in ai.iter().zip(bj) {
                acc = x.mul_add(*y, acc);
            }
            *o = acc;
        }
    });
}

/// `out[n, m] = a[n, k] * b[k, m]`
pub fn matmul_nn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    par::for_each_row(out, m, |i, row| {
        let ai = &a[i * k..(i + 1) * k];
        row.fill(0.0);
        for (p, &av) in ai.iter().enumerate() {
            let bp = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(bp) {
                *o = av.mul_add(bv, *o);
            }
        }
    });
}

/// `out[k, m] = a[n, k]^T * b[n, m]`
pub fn matmul_tn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    par::for_each_row(out, m, |i, row| {
        row.fill(0.0);
        for s in 0..n {
            let av = a[s * k + i];
            let bs = &b[s * m..(s + 1) * m];
            for (o, &bv) in row.iter_mut().zip(bs) {
                *o = av.mul_add(bv, *o);
            }
        }
    });
}

/// Sum of each column of `a[n, m]`.
pub fn column_sums(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * m);
    let mut out = vec![0.0; m];
    for r in 0..n {
        for (o, v) in out.iter_mut().zip(&a[r * m..(r + 1) * m]) {
            *o += v;
        }
    }
    out
}
