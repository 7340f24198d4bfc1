//! Squared-L2 patch distance kernel and the blocked matcher.
//!
//! Distances are computed exactly (no approximate nearest neighbor); the
//! matcher streams the distance matrix in row blocks so peak memory stays
//! proportional to `block_rows * |Y|`, caching blocks when they fit the
//! configured budget. All reductions use a fixed summation order per
//! output element, so results are bit-identical across thread counts.

use multiversion::multiversion;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Squared Euclidean distance with an explicit 8-lane accumulator layout.
///
/// The lane structure fixes the summation order (independent of SIMD
/// width and thread count) while letting the compiler vectorize.
#[multiversion(targets("x86_64+avx512f", "x86_64+avx2+fma", "aarch64+neon"))]
pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let split = n - n % LANES;
    let mut acc = [0.0f64; LANES];
    for (ca, cb) in a[..split]
        .chunks_exact(LANES)
        .zip(b[..split].chunks_exact(LANES))
    {
        for l in 0..LANES {
            let d = ca[l] - cb[l];
            acc[l] = d.mul_add(d, acc[l]);
        }
    }
    let mut tail = 0.0;
    for (va, vb) in a[split..].iter().zip(&b[split..]) {
        let d = va - vb;
        tail = d.mul_add(d, tail);
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// Overlapping patch windows over one or more flattened feature tracks.
///
/// A patch is `patch_len` consecutive frames; with row-major tracks each
/// patch is a contiguous slice, so no per-patch copies are made.
pub(crate) struct PatchIndex<'a> {
    tracks: Vec<&'a [f64]>,
    width: usize,
    patch_len: usize,
    /// Patch id -> (track, start frame), in track order then frame order.
    starts: Vec<(usize, usize)>,
}

impl<'a> PatchIndex<'a> {
    /// `tracks[e]` must be the row-major data of an `H_e x width` matrix.
    pub fn new(tracks: Vec<&'a [f64]>, width: usize, patch_len: usize) -> Result<Self> {
        if tracks.is_empty() {
            return Err(Error::config("patch extraction needs at least one track"));
        }
        let mut starts = Vec::new();
        for (e, track) in tracks.iter().enumerate() {
            debug_assert_eq!(track.len() % width, 0);
            let frames = track.len() / width;
            if frames < patch_len {
                return Err(Error::config(format!(
                    "example {e}: track has {frames} frames, shorter than the patch size {patch_len}"
                )));
            }
            for t in 0..=frames - patch_len {
                starts.push((e, t));
            }
        }
        Ok(PatchIndex {
            tracks,
            width,
            patch_len,
            starts,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn start(&self, patch: usize) -> (usize, usize) {
        self.starts[patch]
    }

    /// The full flattened patch: `patch_len * width` values.
    pub fn patch(&self, patch: usize) -> &[f64] {
        let (e, t) = self.starts[patch];
        let begin = t * self.width;
        &self.tracks[e][begin..begin + self.patch_len * self.width]
    }

    /// Frame `k` of a patch: `width` values.
    pub fn frame(&self, patch: usize, k: usize) -> &[f64] {
        let (e, t) = self.starts[patch];
        let begin = (t + k) * self.width;
        &self.tracks[e][begin..begin + self.width]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MatchOptions {
    pub alpha: f64,
    /// Rows of the distance matrix computed (and possibly cached) at once.
    pub block_rows: usize,
    /// Budget for keeping computed blocks alive between the min pass and
    /// the argmin pass; beyond it, blocks are recomputed.
    pub cache_bytes: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            alpha: 0.01,
            block_rows: 2048,
            cache_bytes: 1 << 30,
        }
    }
}

fn distance_block(x: &PatchIndex, y: &PatchIndex, rows: std::ops::Range<usize>) -> Vec<f64> {
    let ny = y.len();
    let mut block = vec![0.0f64; rows.len() * ny];
    block
        .par_chunks_mut(ny)
        .enumerate()
        .for_each(|(i, out_row)| {
            let xi = x.patch(rows.start + i);
            for (j, out) in out_row.iter_mut().enumerate() {
                *out = squared_l2(xi, y.patch(j));
            }
        });
    block
}

/// Per-column minima of the full distance matrix between `x` (rows) and
/// `y` (columns), i.e. each y-patch's distance to its nearest x-patch.
pub(crate) fn column_minima(x: &PatchIndex, y: &PatchIndex, block_rows: usize) -> Vec<f64> {
    let ny = y.len();
    let mut colmin = vec![f64::INFINITY; ny];
    let block = block_rows.max(1);
    let mut row = 0;
    while row < x.len() {
        let hi = (row + block).min(x.len());
        let d = distance_block(x, y, row..hi);
        for r in d.chunks_exact(ny) {
            for (m, &v) in colmin.iter_mut().zip(r) {
                if v < *m {
                    *m = v;
                }
            }
        }
        row = hi;
    }
    colmin
}

/// For every x-patch, the index of the y-patch minimizing the normalized
/// distance `D[i][j] / (alpha + min_i D[i][j])`. Ties break to the
/// smallest index.
pub(crate) fn matched_indices(
    x: &PatchIndex,
    y: &PatchIndex,
    opts: &MatchOptions,
) -> Result<Vec<usize>> {
    let nx = x.len();
    let ny = y.len();
    let block = opts.block_rows.max(1);
    let keep = nx
        .checked_mul(ny)
        .and_then(|n| n.checked_mul(8))
        .map(|bytes| bytes <= opts.cache_bytes)
        .unwrap_or(false);

    let mut colmin = vec![f64::INFINITY; ny];
    let mut cached: Vec<Vec<f64>> = Vec::new();
    let mut row = 0;
    while row < nx {
        let hi = (row + block).min(nx);
        let d = distance_block(x, y, row..hi);
        for r in d.chunks_exact(ny) {
            for (m, &v) in colmin.iter_mut().zip(r) {
                if v < *m {
                    *m = v;
                }
            }
        }
        if keep {
            cached.push(d);
        }
        row = hi;
    }

    if opts.alpha == 0.0 && colmin.iter().any(|&m| m <= 0.0) {
        return Err(Error::numeric(
            "zero denominator: alpha = 0 with exact patch matches",
        ));
    }
    let denom: Vec<f64> = colmin.iter().map(|m| opts.alpha + m).collect();

    let argmin_rows = |d: &[f64], out: &mut [usize]| {
        d.par_chunks_exact(ny)
            .zip(out.par_iter_mut())
            .for_each(|(r, slot)| {
                let mut best = 0usize;
                let mut best_val = r[0] / denom[0];
                for j in 1..ny {
                    let v = r[j] / denom[j];
                    if v < best_val {
                        best_val = v;
                        best = j;
                    }
                }
                *slot = best;
            });
    };

    let mut matches = vec![0usize; nx];
    if keep {
        let mut row = 0;
        for d in &cached {
            let rows = d.len() / ny;
            argmin_rows(d, &mut matches[row..row + rows]);
            row += rows;
        }
    } else {
        let mut row = 0;
        while row < nx {
            let hi = (row + block).min(nx);
            let d = distance_block(x, y, row..hi);
            argmin_rows(&d, &mut matches[row..hi]);
            row = hi;
        }
    }
    Ok(matches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for len in [1usize, 7, 8, 9, 31, 64, 100, 257] {
            let a: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            let got = squared_l2(&a, &b);
            assert!((got - naive).abs() <= 1e-9 * naive.max(1.0));
        }
    }

    #[test]
    fn patch_index_windows_are_contiguous() {
        // 4 frames, width 2, p = 2 -> 3 windows.
        let track: Vec<f64> = (0..8).map(f64::from).collect();
        let idx = PatchIndex::new(vec![&track], 2, 2).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.patch(0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(idx.patch(2), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(idx.frame(1, 1), &[4.0, 5.0]);
    }

    #[test]
    fn short_track_is_an_error() {
        let track = vec![0.0; 4];
        assert!(PatchIndex::new(vec![&track], 2, 3).is_err());
    }

    #[test]
    fn blocked_matcher_is_block_size_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xa: Vec<f64> = (0..40 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ya: Vec<f64> = (0..25 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = PatchIndex::new(vec![&xa], 3, 4).unwrap();
        let y = PatchIndex::new(vec![&ya], 3, 4).unwrap();
        let base = matched_indices(
            &x,
            &y,
            &MatchOptions {
                alpha: 0.01,
                block_rows: 1_000_000,
                cache_bytes: 1 << 30,
            },
        )
        .unwrap();
        for block_rows in [1usize, 3, 7, 37] {
            for cache_bytes in [0usize, 1 << 30] {
                let got = matched_indices(
                    &x,
                    &y,
                    &MatchOptions {
                        alpha: 0.01,
                        block_rows,
                        cache_bytes,
                    },
                )
                .unwrap();
                assert_eq!(got, base);
            }
        }
    }

    #[test]
    fn alpha_zero_with_exact_match_errors() {
        let track = vec![1.0, 2.0, 3.0, 4.0];
        let x = PatchIndex::new(vec![&track], 2, 2).unwrap();
        let y = PatchIndex::new(vec![&track], 2, 2).unwrap();
        let err = matched_indices(
            &x,
            &y,
            &MatchOptions {
                alpha: 0.0,
                ..MatchOptions::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("alpha = 0"));
    }
}
