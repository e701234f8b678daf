use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{DmfError, Result};
use crate::model::forward::{bce_loss_logit, forward_example, PreparedExample};
use crate::model::{backward_example, AdamState, ModelGrads, ModelParams};
use crate::real::Real;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 128, epochs: 1, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub examples: usize,
    pub batches: usize,
}

/// One epoch of mini-batch SGD with Adam. Examples are shuffled with a
/// seeded RNG (the epoch index perturbs the stream so epochs differ but the
/// whole run stays reproducible). Aborts on a non-finite loss.
pub fn train_epoch<T: Real>(
    params: &mut ModelParams<T>,
    opt: &mut AdamState,
    data: &[PreparedExample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(DmfError::InvalidConfig("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15));
    order.shuffle(&mut rng);

    let mut grads = ModelGrads::zeros_like(params);
    let mut loss_sum = 0.0f64;
    let mut seen = 0usize;
    let mut batches = 0usize;

    for chunk in order.chunks(cfg.batch_size.max(1)) {
        grads.zero();
        let inv = 1.0 / chunk.len() as f64;
        for &i in chunk {
            let prep = &data[i];
            let cache = forward_example(params, prep, None)?;
            let loss = bce_loss_logit(prep.label, cache.logit.to_f64());
            if !loss.is_finite() {
                return Err(DmfError::NonFiniteLoss { step: opt.step_count() as usize, loss });
            }
            loss_sum += loss;
            backward_example(params, prep, &cache, inv, &mut grads)?;
        }
        opt.step(params, &grads);
        seen += chunk.len();
        batches += 1;
    }

    Ok(EpochMetrics { mean_loss: loss_sum / seen as f64, examples: seen, batches })
}

/// Scores every example, returning (labels, pCTRs) aligned by index.
pub fn evaluate_scores<T: Real>(
    params: &ModelParams<T>,
    data: &[PreparedExample],
) -> Result<(Vec<u8>, Vec<f64>)> {
    let mut labels = Vec::with_capacity(data.len());
    let mut scores = Vec::with_capacity(data.len());
    for prep in data {
        let cache = forward_example(params, prep, None)?;
        labels.push(prep.label);
        scores.push(cache.yhat.to_f64());
    }
    Ok((labels, scores))
}
