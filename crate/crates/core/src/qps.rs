//! Wall-clock stress harness: sustained request scoring with per-request
//! latency tracking, used to compare serving throughput across strategies.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bucketing::Bucketizer;
use crate::error::{DmfError, Result};
use crate::features::MultimodalTable;
use crate::model::ModelParams;
use crate::serving::{prepare_user, score_candidates};

#[derive(Debug, Clone)]
pub struct QpsConfig {
    /// Candidates scored per request (B).
    pub candidates: usize,
    /// History length per simulated user (L).
    pub history_len: usize,
    /// Measurement window; must be at least one second.
    pub duration: Duration,
    pub threads: usize,
    /// Reuse the per-user K/V cache across candidates where supported.
    pub reuse: bool,
    pub seed: u64,
}

impl Default for QpsConfig {
    fn default() -> Self {
        QpsConfig {
            candidates: 100,
            history_len: 100,
            duration: Duration::from_secs(2),
            threads: 1,
            reuse: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QpsReport {
    pub strategy: String,
    pub candidates: usize,
    pub history_len: usize,
    pub threads: usize,
    pub reuse: bool,
    pub requests: u64,
    pub elapsed_secs: f64,
    pub qps: f64,
    pub p50_latency_ms: f64,
    pub p99_latency_ms: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Honors the `DMF_THREADS` environment cap when set.
pub fn effective_threads(requested: usize) -> usize {
    let cap = std::env::var("DMF_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0);
    match cap {
        Some(c) => requested.clamp(1, c),
        None => requested.max(1),
    }
}

/// Drives synthetic scoring requests against the model for the configured
/// window. Each request prepares one user context (histories sampled from
/// the vocabulary) and scores a full candidate slate; every thread measures
/// its own request latencies.
pub fn qps_bench(
    params: &ModelParams<f32>,
    mm: &MultimodalTable,
    bucketizer: &Bucketizer,
    cfg: &QpsConfig,
) -> Result<QpsReport> {
    if cfg.duration < Duration::from_secs(1) {
        return Err(DmfError::InvalidConfig(
            "qps window shorter than one second is too noisy to report".into(),
        ));
    }
    if cfg.candidates == 0 || cfg.history_len == 0 {
        return Err(DmfError::InvalidConfig("qps needs candidates and history".into()));
    }
    let item_ids = params.items.ids();
    if item_ids.is_empty() {
        return Err(DmfError::InvalidConfig("empty item vocabulary".into()));
    }
    let threads = effective_threads(cfg.threads);
    let stop = AtomicBool::new(false);
    let start = Instant::now();

    let latencies: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(threads);
        for t in 0..threads {
            let stop = &stop;
            let cfg = cfg.clone();
            handles.push(scope.spawn(move || -> Result<Vec<f64>> {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
                let mut samples = Vec::new();
                // each request: fresh user context + full slate
                while !stop.load(Ordering::Relaxed) {
                    let user_id = 1 + rng.gen_range(0..1000u64);
                    let history: Vec<u64> = (0..cfg.history_len)
                        .map(|_| item_ids[rng.gen_range(0..item_ids.len())])
                        .collect();
                    let slate: Vec<u64> = (0..cfg.candidates)
                        .map(|_| item_ids[rng.gen_range(0..item_ids.len())])
                        .collect();
                    let t0 = Instant::now();
                    let ctx = prepare_user(params, mm, user_id, &history)?;
                    let scores =
                        score_candidates(params, mm, bucketizer, &ctx, &slate, cfg.reuse)?;
                    samples.push(t0.elapsed().as_secs_f64() * 1e3);
                    debug_assert_eq!(scores.len(), cfg.candidates);
                }
                Ok(samples)
            }));
        }
        // timer thread keeps the workers honest even under long requests
        let mut out = Vec::with_capacity(threads);
        while start.elapsed() < cfg.duration {
            std::thread::sleep(Duration::from_millis(10));
        }
        stop.store(true, Ordering::Relaxed);
        for h in handles {
            out.push(h.join().expect("qps worker panicked"));
        }
        out
    });

    let elapsed = start.elapsed().as_secs_f64();
    let mut all: Vec<f64> = Vec::new();
    for s in latencies {
        all.extend(s?);
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let requests = all.len() as u64;
    Ok(QpsReport {
        strategy: params.config.strategy.to_string(),
        candidates: cfg.candidates,
        history_len: cfg.history_len,
        threads,
        reuse: cfg.reuse,
        requests,
        elapsed_secs: elapsed,
        qps: requests as f64 / elapsed,
        p50_latency_ms: percentile(&all, 0.5),
        p99_latency_ms: percentile(&all, 0.99),
    })
}
