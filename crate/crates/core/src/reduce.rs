//! Order-fixed floating point reductions.
//!
//! Sums are formed over fixed-size blocks (pairwise within a block, then
//! pairwise over the block sums), so the result is bitwise identical no matter
//! how many worker threads computed the blocks.

use rayon::prelude::*;

/// Block length of the parallel reduction tree.
pub const BLOCK: usize = 1024;

/// Pairwise (cascade) summation in ascending index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        let mut s = 0.0;
        for &v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sums `f(i)` for `i in 0..n` with a thread-count independent summation tree.
pub fn det_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let blocks: Vec<f64> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(n);
            let vals: Vec<f64> = (lo..hi).map(&f).collect();
            pairwise_sum(&vals)
        })
        .collect();
    pairwise_sum(&blocks)
}

/// Vector-valued reduction: `f(i, acc)` adds sample `i`'s contribution into
/// the accumulator of its block (length `width`). Samples are accumulated in
/// ascending order within a block and block totals are summed pairwise, so the
/// result does not depend on the thread count.
pub fn det_sum_vec<F>(n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let blocks: Vec<Vec<f64>> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(n);
            let mut acc = vec![0.0; width];
            for i in lo..hi {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut col = vec![0.0; blocks.len()];
    (0..width)
        .map(|j| {
            for (k, b) in blocks.iter().enumerate() {
                col[k] = b[j];
            }
            pairwise_sum(&col)
        })
        .collect()
}
