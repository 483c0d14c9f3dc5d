//! Halton low-discrepancy sequence.

use super::ScenarioError;

const PRIMES: [u64; 20] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71];

pub const MAX_DIMENSION: usize = PRIMES.len();

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    out
}

/// The `index`-th Halton point (indices start at 1; index 0 is the origin).
pub fn halton_point(index: u64, dimension: usize) -> Vec<f64> {
    PRIMES[..dimension].iter().map(|&p| radical_inverse(index, p)).collect()
}

/// First `count` points of the Halton sequence with the first `dimension`
/// primes as bases, starting after the origin.
pub fn halton(dimension: usize, count: usize) -> Result<Vec<Vec<f64>>, ScenarioError> {
    halton_from(dimension, count, 0)
}

/// Like [`halton`] but skips the first `skip` points.
pub fn halton_from(dimension: usize, count: usize, skip: u64) -> Result<Vec<Vec<f64>>, ScenarioError> {
    if dimension == 0 || dimension > MAX_DIMENSION {
        return Err(ScenarioError::Dimension { dimension, max: MAX_DIMENSION });
    }
    if count == 0 {
        return Err(ScenarioError::Count);
    }
    Ok((0..count as u64).map(|i| halton_point(skip + i + 1, dimension)).collect())
}
