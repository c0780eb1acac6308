//! Index-table builders for convolution/pooling style ops.
//!
//! Activations live in row-major "(t, h, w) rows × channel columns" layout;
//! every structured op (conv unfold, patch gather, nearest upsampling) is a
//! row-index table consumed by [`crate::tensor::Tape::unfold`]. `PAD` marks
//! zero padding.

use super::tape::PAD;

/// Row index for grid position (t, h, w) in a (T, H, W) grid.
#[inline]
pub fn row_of(t: usize, h: usize, w: usize, grid: (usize, usize, usize)) -> usize {
    (t * grid.1 + h) * grid.2 + w
}

/// 2-D k×k unfold applied per frame, with symmetric zero padding `pad` and
/// stride `stride`. Output grid: (T, H', W') with H' = (H + 2·pad − k)/stride + 1.
/// Table layout: out_row-major, group = k·k gathered input rows.
pub fn unfold_spatial(
    grid: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<usize>, (usize, usize, usize)) {
    let (t_dim, h_dim, w_dim) = grid;
    let h_out = (h_dim + 2 * pad - k) / stride + 1;
    let w_out = (w_dim + 2 * pad - k) / stride + 1;
    let mut table = Vec::with_capacity(t_dim * h_out * w_out * k * k);
    for t in 0..t_dim {
        for oh in 0..h_out {
            for ow in 0..w_out {
                for dy in 0..k {
                    for dx in 0..k {
                        let ih = (oh * stride + dy) as isize - pad as isize;
                        let iw = (ow * stride + dx) as isize - pad as isize;
                        if ih < 0 || iw < 0 || ih >= h_dim as isize || iw >= w_dim as isize {
                            table.push(PAD);
                        } else {
                            table.push(row_of(t, ih as usize, iw as usize, grid));
                        }
                    }
                }
            }
        }
    }
    (table, (t_dim, h_out, w_out))
}

/// 1-D temporal unfold with kernel `k`, *left* zero padding `k − 1` (causal),
/// and stride `stride`. Output frames: (T + (k−1) − k)/stride + 1.
pub fn unfold_temporal_causal(
    grid: (usize, usize, usize),
    k: usize,
    stride: usize,
) -> (Vec<usize>, (usize, usize, usize)) {
    let (t_dim, h_dim, w_dim) = grid;
    let pad = k - 1;
    let t_out = (t_dim + pad - k) / stride + 1;
    let mut table = Vec::with_capacity(t_out * h_dim * w_dim * k);
    for ot in 0..t_out {
        for h in 0..h_dim {
            for w in 0..w_dim {
                for dt in 0..k {
                    let it = (ot * stride + dt) as isize - pad as isize;
                    if it < 0 {
                        table.push(PAD);
                    } else {
                        table.push(row_of(it as usize, h, w, grid));
                    }
                }
            }
        }
    }
    (table, (t_out, h_dim, w_dim))
}

/// Nearest-neighbor 2× spatial upsample as a k=1 gather table.
pub fn upsample_spatial_2x(grid: (usize, usize, usize)) -> (Vec<usize>, (usize, usize, usize)) {
    let (t_dim, h_dim, w_dim) = grid;
    let mut table = Vec::with_capacity(t_dim * h_dim * w_dim * 4);
    for t in 0..t_dim {
        for h in 0..h_dim * 2 {
            for w in 0..w_dim * 2 {
                table.push(row_of(t, h / 2, w / 2, grid));
            }
        }
    }
    (table, (t_dim, h_dim * 2, w_dim * 2))
}

/// Temporal upsample K → 2K−1 with the first frame kept single:
/// `[f0, f1, f1, f2, f2, …]`. Maps a (4k+1)-frame ladder back up exactly and
/// leaves a single frame untouched, so images share the video path.
pub fn upsample_temporal_first_single(
    grid: (usize, usize, usize),
) -> (Vec<usize>, (usize, usize, usize)) {
    let (t_dim, h_dim, w_dim) = grid;
    let t_out = if t_dim == 0 { 0 } else { 2 * t_dim - 1 };
    let mut table = Vec::with_capacity(t_out * h_dim * w_dim);
    for ot in 0..t_out {
        let it = ot.div_ceil(2);
        for h in 0..h_dim {
            for w in 0..w_dim {
                table.push(row_of(it, h, w, grid));
            }
        }
    }
    (table, (t_out, h_dim, w_dim))
}

/// Patch gather: group (1, p, p) cells of a (T, H, W) grid into one output
/// row per patch, channels concatenated in (dy, dx) order.
pub fn patch_gather(
    grid: (usize, usize, usize),
    p: usize,
) -> (Vec<usize>, (usize, usize, usize)) {
    let (t_dim, h_dim, w_dim) = grid;
    assert!(h_dim % p == 0 && w_dim % p == 0, "patch_gather needs divisible dims");
    let (h_out, w_out) = (h_dim / p, w_dim / p);
    let mut table = Vec::with_capacity(t_dim * h_out * w_out * p * p);
    for t in 0..t_dim {
        for oh in 0..h_out {
            for ow in 0..w_out {
                for dy in 0..p {
                    for dx in 0..p {
                        table.push(row_of(t, oh * p + dy, ow * p + dx, grid));
                    }
                }
            }
        }
    }
    (table, (t_dim, h_out, w_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temporal_ladder_hits_4k_plus_1() {
        for k in 0..6usize {
            let t = 4 * k + 1;
            let (_, g1) = unfold_temporal_causal((t, 2, 2), 3, 2);
            let (_, g2) = unfold_temporal_causal((g1.0, 2, 2), 3, 2);
            assert_eq!(g2.0, k + 1, "T={t}");
            let (_, u1) = upsample_temporal_first_single((g2.0, 2, 2));
            let (_, u2) = upsample_temporal_first_single((u1.0, 2, 2));
            assert_eq!(u2.0, t, "T={t} round trip");
        }
    }

    #[test]
    fn spatial_same_conv_geometry() {
        let (table, out) = unfold_spatial((1, 4, 4), 3, 1, 1);
        assert_eq!(out, (1, 4, 4));
        assert_eq!(table.len(), 16 * 9);
        // Corner (0,0): top-left neighbors are padding.
        assert_eq!(table[0], PAD);
        assert_eq!(table[4], row_of(0, 0, 0, (1, 4, 4)));
    }

    #[test]
    fn causal_temporal_never_reads_the_future() {
        let (table, out) = unfold_temporal_causal((9, 1, 1), 3, 2);
        assert_eq!(out.0, 5);
        for ot in 0..5 {
            for dt in 0..3 {
                let ix = table[ot * 3 + dt];
                if ix != PAD {
                    assert!(ix <= 2 * ot, "output {ot} reads input {ix}");
                }
            }
        }
    }

    #[test]
    fn patch_gather_counts() {
        let (table, out) = patch_gather((5, 4, 4), 2);
        assert_eq!(out, (5, 2, 2));
        assert_eq!(table.len(), 5 * 4 * 4);
    }
}
