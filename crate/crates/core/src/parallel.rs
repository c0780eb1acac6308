//! Data-parallel helpers with a sequential fallback.
//!
//! All parallel entry points here are restricted to *independent per-item
//! work*: each item's output is a pure function of its input, written into
//! its own slot. No floating-point reduction ever runs under rayon, so the
//! `parallel` feature changes wall-clock time, never results. The `*_seq`
//! twins always exist and are what the criterion benches compare against.

/// Map `f` over `0..len`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Sync>(len: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Sync>(len: usize, f: F) -> Vec<T> {
    map_indexed_seq(len, f)
}

/// Sequential twin of [`map_indexed`].
pub fn map_indexed_seq<T, F: Fn(usize) -> T>(len: usize, f: F) -> Vec<T> {
    (0..len).map(f).collect()
}

/// Apply `f` to disjoint row chunks of `out` (a flat row-major buffer with
/// `rows` rows of `row_len` elements). `f(row_index, row_slice)` fills one row.
#[cfg(feature = "parallel")]
pub fn for_each_row<F: Fn(usize, &mut [f64]) + Sync>(out: &mut [f64], row_len: usize, f: F) {
    use rayon::prelude::*;
    if row_len == 0 {
        return;
    }
    out.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, chunk)| f(i, chunk));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_row<F: Fn(usize, &mut [f64]) + Sync>(out: &mut [f64], row_len: usize, f: F) {
    for_each_row_seq(out, row_len, f);
}

/// Sequential twin of [`for_each_row`].
pub fn for_each_row_seq<F: Fn(usize, &mut [f64])>(out: &mut [f64], row_len: usize, f: F) {
    if row_len == 0 {
        return;
    }
    for (i, chunk) in out.chunks_mut(row_len).enumerate() {
        f(i, chunk);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_matches_seq() {
        let par = map_indexed(100, |i| (i * i) as f64 / 7.0);
        let seq = map_indexed_seq(100, |i| (i * i) as f64 / 7.0);
        assert_eq!(par, seq);
    }

    #[test]
    fn for_each_row_matches_seq() {
        let fill = |i: usize, row: &mut [f64]| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (i * 31 + j) as f64 * 0.25;
            }
        };
        let mut a = vec![0.0; 12 * 8];
        let mut b = vec![0.0; 12 * 8];
        for_each_row(&mut a, 8, fill);
        for_each_row_seq(&mut b, 8, fill);
        assert_eq!(a, b);
    }
}
