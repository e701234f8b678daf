//! Equal-frequency discretization of similarity scores and the fixed-width
//! histogram used by the modality-centric path.
//!
//! A fitted [`Bucketizer`] is frozen: boundaries are computed offline from a
//! sample of training similarity scores and serialized as JSON so train and
//! serve runs agree bucket-for-bucket.

use serde::{Deserialize, Serialize};

use crate::error::{DmfError, Result};

const FORMAT_VERSION: u32 = 1;

/// Maps a similarity score in [-1, 1] to a bucket index in `1..=bucket_count`.
/// Intervals are half-open `[lo, hi)`; a score exactly on a boundary goes to
/// the right bucket.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Bucketizer {
    version: u32,
    bucket_count: usize,
    /// Strictly ascending interior boundaries, length `bucket_count - 1`.
    boundaries: Vec<f64>,
    #[serde(skip)]
    uniform_fallback: bool,
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    let bits = x.to_bits();
    if x == 0.0 {
        f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

fn uniform_boundaries(m: usize) -> Vec<f64> {
    (1..m).map(|k| -1.0 + 2.0 * k as f64 / m as f64).collect()
}

impl Bucketizer {
    /// Fits `(k/m)`-quantile boundaries, `k = 1..m-1`, on the sample.
    ///
    /// Falls back to uniform boundaries over [-1, 1] when the sample has
    /// fewer distinct values than buckets; duplicate quantiles are otherwise
    /// nudged up by minimal ULP steps so the boundaries stay strictly
    /// ascending.
    pub fn fit_equal_frequency(samples: &[f64], m: usize) -> Result<Bucketizer> {
        if samples.is_empty() {
            return Err(DmfError::InvalidConfig("cannot fit bucketizer on empty sample".into()));
        }
        if m < 2 {
            return Err(DmfError::InvalidConfig(format!("bucket count must be >= 2, got {}", m)));
        }
        let mut sorted: Vec<f64> = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut distinct = 1usize;
        for w in sorted.windows(2) {
            if w[1] > w[0] {
                distinct += 1;
            }
        }
        if m > distinct {
            eprintln!(
                "warning: {} buckets requested but only {} distinct samples; using uniform boundaries",
                m, distinct
            );
            return Ok(Bucketizer {
                version: FORMAT_VERSION,
                bucket_count: m,
                boundaries: uniform_boundaries(m),
                uniform_fallback: true,
            });
        }

        let mut boundaries: Vec<f64> =
            (1..m).map(|k| quantile_sorted(&sorted, k as f64 / m as f64)).collect();
        for i in 1..boundaries.len() {
            if boundaries[i] <= boundaries[i - 1] {
                boundaries[i] = next_up(boundaries[i - 1]);
            }
        }
        Ok(Bucketizer {
            version: FORMAT_VERSION,
            bucket_count: m,
            boundaries,
            uniform_fallback: false,
        })
    }

    /// Builds a bucketizer directly from interior boundaries.
    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Bucketizer> {
        if boundaries.is_empty() {
            return Err(DmfError::InvalidConfig("need at least one boundary".into()));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DmfError::InvalidConfig("boundaries must be strictly ascending".into()));
        }
        Ok(Bucketizer {
            version: FORMAT_VERSION,
            bucket_count: boundaries.len() + 1,
            boundaries,
            uniform_fallback: false,
        })
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn is_uniform_fallback(&self) -> bool {
        self.uniform_fallback
    }

    /// 1-based bucket index; scores outside [-1, 1] (float error) are
    /// clamped first.
    #[inline]
    pub fn bucket(&self, c: f64) -> usize {
        let c = c.clamp(-1.0, 1.0);
        self.boundaries.partition_point(|&b| b <= c) + 1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Bucketizer> {
        let bz: Bucketizer = serde_json::from_str(s)?;
        if bz.version != FORMAT_VERSION {
            return Err(DmfError::BadFormat(format!("unsupported bucketizer version {}", bz.version)));
        }
        if bz.boundaries.len() + 1 != bz.bucket_count {
            return Err(DmfError::BadFormat("boundary count does not match bucket_count".into()));
        }
        if bz.boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DmfError::BadFormat("boundaries not strictly ascending".into()));
        }
        Ok(bz)
    }
}

/// Counts scores into `n` uniform intervals over [-1, 1]; the last interval
/// is closed at +1. Counts always sum to `scores.len()`.
pub fn uniform_histogram(scores: &[f64], n: usize) -> Vec<u32> {
    assert!(n >= 1, "histogram needs at least one interval");
    let mut counts = vec![0u32; n];
    for &c in scores {
        let c = c.clamp(-1.0, 1.0);
        let idx = (((c + 1.0) * n as f64) / 2.0).floor() as usize;
        counts[idx.min(n - 1)] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_quantile_by_hand() {
        let bz = Bucketizer::fit_equal_frequency(&[0.0, 0.25, 0.5, 0.75], 2).unwrap();
        assert_eq!(bz.boundaries(), &[0.375]);
        assert_eq!(bz.bucket(0.1), 1);
        assert_eq!(bz.bucket(0.6), 2);
    }

    #[test]
    fn fit_symmetric_pair() {
        let bz = Bucketizer::fit_equal_frequency(&[-0.4, 0.4], 2).unwrap();
        assert_eq!(bz.boundaries(), &[0.0]);
    }

    #[test]
    fn fit_degenerate_falls_back_to_uniform() {
        let bz = Bucketizer::fit_equal_frequency(&[0.3; 10], 4).unwrap();
        assert!(bz.is_uniform_fallback());
        assert_eq!(bz.boundaries(), &[-0.5, 0.0, 0.5]);
    }

    #[test]
    fn bucket_edges() {
        let bz = Bucketizer::fit_equal_frequency(&[-0.8, -0.2, 0.2, 0.8], 4).unwrap();
        assert_eq!(bz.bucket(-1.0), 1);
        assert_eq!(bz.bucket(1.0), 4);
        // exactly on a boundary goes right
        let b0 = bz.boundaries()[0];
        assert_eq!(bz.bucket(b0), 2);
    }

    #[test]
    fn bucket_monotone() {
        let bz = Bucketizer::fit_equal_frequency(&[-0.9, -0.3, 0.1, 0.4, 0.9, 0.95], 3).unwrap();
        let mut prev = 0;
        let mut c = -1.0;
        while c <= 1.0 {
            let b = bz.bucket(c);
            assert!(b >= prev && (1..=3).contains(&b));
            prev = b;
            c += 0.01;
        }
    }

    #[test]
    fn histogram_hand_placement() {
        assert_eq!(uniform_histogram(&[-0.9, 0.1, 0.95], 4), vec![1, 0, 1, 1]);
        assert_eq!(uniform_histogram(&[], 4), vec![0, 0, 0, 0]);
        assert_eq!(uniform_histogram(&[1.0, 1.0, 1.0], 4), vec![0, 0, 0, 3]);
    }

    #[test]
    fn refit_deterministic() {
        let samples: Vec<f64> = (0..500).map(|i| ((i * 37) % 499) as f64 / 250.0 - 1.0).collect();
        let a = Bucketizer::fit_equal_frequency(&samples, 16).unwrap();
        let b = Bucketizer::fit_equal_frequency(&samples, 16).unwrap();
        assert_eq!(a.boundaries(), b.boundaries());
    }

    #[test]
    fn json_round_trip() {
        let bz = Bucketizer::fit_equal_frequency(&[-0.5, 0.0, 0.5, 0.9], 3).unwrap();
        let s = bz.to_json().unwrap();
        let back = Bucketizer::from_json(&s).unwrap();
        assert_eq!(bz.boundaries(), back.boundaries());
        assert_eq!(bz.bucket_count(), back.bucket_count());
    }
}
