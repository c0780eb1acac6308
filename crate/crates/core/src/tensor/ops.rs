//! Dense f64 kernels.
//!
//! Matrix products are parallelized over output rows: every output element
//! is a pure function of its inputs and is written exactly once, so the
//! parallel and sequential paths are bit-identical. Reductions inside one
//! output element are always sequential left-to-right.

use ndarray::{Array2, ArrayView2};

use crate::parallel;

/// C = op(A) · op(B), where `ta`/`tb` transpose their operand.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>, ta: bool, tb: bool) -> Array2<f64> {
    let (am, ak) = if ta { (a.ncols(), a.nrows()) } else { (a.nrows(), a.ncols()) };
    let (bk, bn) = if tb { (b.ncols(), b.nrows()) } else { (b.nrows(), b.ncols()) };
    assert_eq!(ak, bk, "matmul inner dims {ak} vs {bk}");
    let mut out = vec![0.0; am * bn];
    // Standardize operands to contiguous row-major buffers.
    let a_std = to_standard(a, ta);
    let b_std = to_standard(b, tb);
    parallel::for_each_row(&mut out, bn, |i, row| {
        mm_row(&a_std, &b_std, ak, bn, i, row);
    });
    Array2::from_shape_vec((am, bn), out).expect("matmul shape")
}

/// Sequential twin of [`matmul`]; used by the benches and equality tests.
pub fn matmul_seq(a: ArrayView2<f64>, b: ArrayView2<f64>, ta: bool, tb: bool) -> Array2<f64> {
    let (am, ak) = if ta { (a.ncols(), a.nrows()) } else { (a.nrows(), a.ncols()) };
    let (bk, bn) = if tb { (b.ncols(), b.nrows()) } else { (b.nrows(), b.ncols()) };
    assert_eq!(ak, bk, "matmul inner dims {ak} vs {bk}");
    let mut out = vec![0.0; am * bn];
    let a_std = to_standard(a, ta);
    let b_std = to_standard(b, tb);
    parallel::for_each_row_seq(&mut out, bn, |i, row| {
        mm_row(&a_std, &b_std, ak, bn, i, row);
    });
    Array2::from_shape_vec((am, bn), out).expect("matmul shape")
}

/// Materialize `a` (optionally transposed) as a contiguous row-major buffer.
fn to_standard(a: ArrayView2<f64>, t: bool) -> Vec<f64> {
    if t {
        let (r, c) = (a.nrows(), a.ncols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a[(i, j)];
            }
        }
        out
    } else if let Some(s) = a.as_slice() {
        s.to_vec()
    } else {
        a.iter().copied().collect()
    }
}

#[inline]
fn mm_row(a: &[f64], b: &[f64], k: usize, n: usize, i: usize, row: &mut [f64]) {
    let arow = &a[i * k..(i + 1) * k];
    row.fill(0.0);
    for (p, &av) in arow.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let brow = &b[p * n..(p + 1) * n];
        for (r, &bv) in row.iter_mut().zip(brow.iter()) {
            *r += av * bv;
        }
    }
}

/// Column-wise sum of a 2-D array, returning shape (1, D).
pub fn sum_rows(a: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((1, a.ncols()));
    for row in a.rows() {
        for (o, v) in out.row_mut(0).iter_mut().zip(row.iter()) {
            *o += v;
        }
    }
    out
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_matches_hand_result() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[5.0, 6.0], [7.0, 8.0]];
        let c = matmul(a.view(), b.view(), false, false);
        assert_eq!(c, array![[19.0, 22.0], [43.0, 50.0]]);
    }

    #[test]
    fn transpose_flags_match_explicit_transpose() {
        let a = Array2::from_shape_fn((3, 4), |(i, j)| (i * 7 + j) as f64 * 0.31);
        let b = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - j as f64) * 0.17);
        let c1 = matmul(a.view(), b.view(), true, false);
        let c2 = matmul(a.t().as_standard_layout().view(), b.view(), false, false);
        assert_eq!(c1, c2);

        let d = Array2::from_shape_fn((5, 4), |(i, j)| (i * j) as f64 * 0.05 - 0.3);
        let e1 = matmul(a.view(), d.view(), false, true);
        let e2 = matmul(a.view(), d.t().as_standard_layout().view(), false, false);
        assert_eq!(e1, e2);
    }

    #[test]
    fn parallel_equals_sequential_bitwise() {
        let a = Array2::from_shape_fn((17, 23), |(i, j)| ((i * 31 + j * 7) as f64).sin());
        let b = Array2::from_shape_fn((23, 11), |(i, j)| ((i + j * 13) as f64).cos());
        let p = matmul(a.view(), b.view(), false, false);
        let s = matmul_seq(a.view(), b.view(), false, false);
        assert_eq!(p, s);
    }
}
