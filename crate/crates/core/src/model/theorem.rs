//! Expressiveness probe for the bucketized similarity representation.
//!
//! A linear enrichment `h_i = s_i + c_i * w` is compared against the bucket
//! lookup `s_i + e_bucket(c_i)` with each embedding pinned to the bucket
//! midpoint times `w`. The worst-case substitution error is bounded by half
//! the widest bucket times `|w|`, and shrinks as the bucket count grows.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bucketing::Bucketizer;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Theorem1Row {
    pub buckets: usize,
    pub max_error: f64,
    pub bound: f64,
}

fn bucket_interval(bz: &Bucketizer, b: usize) -> (f64, f64) {
    let bounds = bz.boundaries();
    let lo = if b == 1 { -1.0 } else { bounds[b - 2] };
    let hi = if b == bounds.len() + 1 { 1.0 } else { bounds[b - 1] };
    (lo, hi)
}

/// For each bucket count, fits an equal-frequency bucketizer on uniform
/// similarity samples and measures the worst replacement error against the
/// theoretical half-width bound.
pub fn theorem1_probe(
    bucket_counts: &[usize],
    w: &[f64],
    sample_count: usize,
    seed: u64,
) -> Result<Vec<Theorem1Row>> {
    let w_norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..sample_count).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut rows = Vec::with_capacity(bucket_counts.len());
    for &m in bucket_counts {
        let bz = Bucketizer::fit_equal_frequency(&samples, m)?;
        let mut max_err = 0.0f64;
        for &c in &samples {
            let b = bz.bucket(c);
            let (lo, hi) = bucket_interval(&bz, b);
            let midpoint = 0.5 * (lo + hi);
            // |(s + c w) - (s + mid w)| = |c - mid| * |w|
            max_err = max_err.max((c - midpoint).abs() * w_norm);
        }
        let mut half_width = 0.0f64;
        for b in 1..=m {
            let (lo, hi) = bucket_interval(&bz, b);
            half_width = half_width.max(0.5 * (hi - lo));
        }
        rows.push(Theorem1Row { buckets: m, max_error: max_err, bound: half_width * w_norm });
    }
    Ok(rows)
}
