//! Row-major matrix products used by the convolution kernels.
//!
//! Every output element accumulates its terms in a fixed index order, so the
//! results do not depend on blocking, thread count or target features.

use crate::tensor::Scalar;

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let zero = T::zero();
    let mut rows = c[..m * n].chunks_exact_mut(4 * n);
    let mut i = 0;
    for block in &mut rows {
        let (c0, rest) = block.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        let (r0, r1, r2, r3) = (
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        );
        for p in 0..k {
            let (a0, a1, a2, a3) = (r0[p], r1[p], r2[p], r3[p]);
            if a0 == zero && a1 == zero && a2 == zero && a3 == zero {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bj = brow[j];
                c0[j] += a0 * bj;
                c1[j] += a1 * bj;
                c2[j] += a2 * bj;
                c3[j] += a3 * bj;
            }
        }
        i += 4;
    }
    for crow in rows.into_remainder().chunks_exact_mut(n) {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &ap) in arow.iter().enumerate() {
            if ap == zero {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += ap * bj;
            }
        }
        i += 1;
    }
}

/// `c += aᵀ · b` with `a: m×k`, `b: m×n`, `c: k×n`.
pub(crate) fn gemm_at_b_acc<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    debug_assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
    let zero = T::zero();
    let mut r = 0;
    while r + 4 <= m {
        let (b0, b1, b2, b3) = (
            &b[r * n..(r + 1) * n],
            &b[(r + 1) * n..(r + 2) * n],
            &b[(r + 2) * n..(r + 3) * n],
            &b[(r + 3) * n..(r + 4) * n],
        );
        for p in 0..k {
            let (a0, a1, a2, a3) = (
                a[r * k + p],
                a[(r + 1) * k + p],
                a[(r + 2) * k + p],
                a[(r + 3) * k + p],
            );
            if a0 == zero && a1 == zero && a2 == zero && a3 == zero {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                let mut acc = crow[j];
                acc += a0 * b0[j];
                acc += a1 * b1[j];
                acc += a2 * b2[j];
                acc += a3 * b3[j];
                crow[j] = acc;
            }
        }
        r += 4;
    }
    while r < m {
        let brow = &b[r * n..(r + 1) * n];
        for p in 0..k {
            let ap = a[r * k + p];
            if ap == zero {
                continue;
            }
            for (cj, &bj) in c[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *cj += ap * bj;
            }
        }
        r += 1;
    }
}

/// Transposes a `rows × cols` row-major matrix.
pub(crate) fn transpose<T: Scalar>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}
