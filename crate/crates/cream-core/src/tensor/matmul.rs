//! Row-major matrix multiply-accumulate used by the convolution kernels.
//!
//! The microkernel processes several rows of C at a time so each row of B
//! is loaded once per row block; the inner loop is a set of independent
//! multiply-add streams over contiguous memory, which the compiler
//! autovectorizes (fused multiply-add when the target has it; the fused and
//! unfused paths differ in rounding but each is deterministic for a given
//! build). Accumulation order over k is fixed, so results do not depend on
//! how callers partition rows across threads.

use super::Scalar;

#[cfg(target_feature = "fma")]
#[inline(always)]
fn madd<T: Scalar>(a: T, b: T, c: T) -> T {
    a.mul_add(b, c)
}

#[cfg(not(target_feature = "fma"))]
#[inline(always)]
fn madd<T: Scalar>(a: T, b: T, c: T) -> T {
    a * b + c
}

/// Column-tile width of the register microkernel.
const NR: usize = 32;
/// Row-block height of the register microkernel.
const MR: usize = 4;

/// C[m x n] += A[m x k] * B[k x n], all row-major.
///
/// Full MR x NR tiles accumulate in a local register tile across the whole
/// k loop and touch C once; edge rows/columns take a slower path with the
/// same per-element accumulation order.
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if n == 0 || k == 0 {
        return;
    }
    let n_full = (n / NR) * NR;
    let mut i = 0;
    while i + MR <= m {
        let mut j0 = 0;
        while j0 < n_full {
            tile4(a, b, c, i, k, n, j0);
            j0 += NR;
        }
        if n_full < n {
            edge_rows(a, b, c, i, MR, k, n, n_full);
        }
        i += MR;
    }
    if i < m {
        let rows = m - i;
        let mut j0 = 0;
        while j0 < n_full {
            for r in 0..rows {
                tile1(a, b, c, i + r, k, n, j0);
            }
            j0 += NR;
        }
        if n_full < n {
            edge_rows(a, b, c, i, rows, k, n, n_full);
        }
    }
}

/// One MR x NR register tile.
#[inline]
fn tile4<T: Scalar>(a: &[T], b: &[T], c: &mut [T], i: usize, k: usize, n: usize, j0: usize) {
    let mut acc = [[T::zero(); NR]; MR];
    for (r, acc_row) in acc.iter_mut().enumerate() {
        acc_row.copy_from_slice(&c[(i + r) * n + j0..(i + r) * n + j0 + NR]);
    }
    for kk in 0..k {
        let brow = &b[kk * n + j0..kk * n + j0 + NR];
        let a0 = a[i * k + kk];
        let a1 = a[(i + 1) * k + kk];
        let a2 = a[(i + 2) * k + kk];
        let a3 = a[(i + 3) * k + kk];
        for j in 0..NR {
            let bj = brow[j];
            acc[0][j] = madd(a0, bj, acc[0][j]);
            acc[1][j] = madd(a1, bj, acc[1][j]);
            acc[2][j] = madd(a2, bj, acc[2][j]);
            acc[3][j] = madd(a3, bj, acc[3][j]);
        }
    }
    for (r, acc_row) in acc.iter().enumerate() {
        c[(i + r) * n + j0..(i + r) * n + j0 + NR].copy_from_slice(acc_row);
    }
}

/// One 1 x NR register tile.
#[inline]
fn tile1<T: Scalar>(a: &[T], b: &[T], c: &mut [T], i: usize, k: usize, n: usize, j0: usize) {
    let mut acc = [T::zero(); NR];
    acc.copy_from_slice(&c[i * n + j0..i * n + j0 + NR]);
    for kk in 0..k {
        let brow = &b[kk * n + j0..kk * n + j0 + NR];
        let aik = a[i * k + kk];
        for j in 0..NR {
            acc[j] = madd(aik, brow[j], acc[j]);
        }
    }
    c[i * n + j0..i * n + j0 + NR].copy_from_slice(&acc);
}

/// Tail columns [j0, n) for `rows` rows starting at `i`.
fn edge_rows<T: Scalar>(a: &[T], b: &[T], c: &mut [T], i: usize, rows: usize, k: usize, n: usize, j0: usize) {
    let width = n - j0;
    let mut acc = vec![T::zero(); rows * width];
    for r in 0..rows {
        acc[r * width..(r + 1) * width].copy_from_slice(&c[(i + r) * n + j0..(i + r + 1) * n]);
    }
    for kk in 0..k {
        let brow = &b[kk * n + j0..(kk + 1) * n];
        for r in 0..rows {
            let aik = a[(i + r) * k + kk];
            let arow = &mut acc[r * width..(r + 1) * width];
            for j in 0..width {
                arow[j] = madd(aik, brow[j], arow[j]);
            }
        }
    }
    for r in 0..rows {
        c[(i + r) * n + j0..(i + r + 1) * n].copy_from_slice(&acc[r * width..(r + 1) * width]);
    }
}

/// out[rows x cols] = transpose of a[cols x rows] (row-major), blocked for
/// cache friendliness.
pub(crate) fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize, out: &mut Vec<T>) {
    assert_eq!(a.len(), rows * cols);
    out.clear();
    out.resize(rows * cols, T::zero());
    const TILE: usize = 32;
    let mut r0 = 0;
    while r0 < rows {
        let r1 = (r0 + TILE).min(rows);
        let mut c0 = 0;
        while c0 < cols {
            let c1 = (c0 + TILE).min(cols);
            for r in r0..r1 {
                for c in c0..c1 {
                    out[c * rows + r] = a[r * cols + c];
                }
            }
            c0 = c1;
        }
        r0 = r1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a[i * k + kk] * b[kk * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn matches_naive_for_odd_shapes() {
        let mut rng = crate::rng::Rng::new(11);
        for &(m, k, n) in &[
            (1, 1, 1),
            (3, 5, 7),
            (4, 4, 4),
            (9, 2, 13),
            (6, 17, 1),
            (5, 3, 64),
        ] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
            let mut c = vec![0.0; m * n];
            matmul_acc(&a, &b, &mut c, m, k, n);
            let want = naive(&a, &b, m, k, n);
            for (got, want) in c.iter().zip(&want) {
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn accumulates_into_existing_values() {
        let a = [1.0f32, 2.0];
        let b = [3.0f32, 4.0];
        let mut c = [10.0f32];
        matmul_acc(&a, &b, &mut c, 1, 2, 1);
        assert_eq!(c[0], 10.0 + 3.0 + 8.0);
    }

    #[test]
    fn transpose_round_trips() {
        let a: Vec<f32> = (0..37 * 53).map(|v| v as f32).collect();
        let mut t = Vec::new();
        transpose(&a, 37, 53, &mut t);
        let mut back = Vec::new();
        transpose(&t, 53, 37, &mut back);
        assert_eq!(a, back);
        assert_eq!(t[0 * 37 + 1], a[53]); // (1, 0) -> (0, 1)
    }
}
