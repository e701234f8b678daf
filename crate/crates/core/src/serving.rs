//! Request-time scoring: per-user precomputation, candidate scoring with or
//! without the target-agnostic K/V cache, and the equivalence check that
//! guards the reuse optimization.

use crate::attention::{precompute_id_kv, IdKv};
use crate::bucketing::Bucketizer;
use crate::error::{DmfError, Result};
use crate::features::{histogram_input, similarity_vector, MultimodalTable, SimilarityVector};
use crate::model::{forward_example, ModelParams, PreparedExample, Strategy};
use crate::numerics::Matrix;
use crate::real::Real;

/// Everything about one user that does not depend on the candidate:
/// resolved history, gathered embeddings, multimodal rows, and the cached
/// ID key/value projections.
#[derive(Debug, Clone)]
pub struct UserContext<T: Real> {
    pub user_id: u64,
    pub user_idx: usize,
    pub history_ids: Vec<u64>,
    pub history_idx: Vec<usize>,
    pub history: Matrix<T>,
    pub hist_mm: Matrix<f32>,
    pub mm_valid: Vec<bool>,
    pub kv: IdKv<T>,
}

/// Resolves a user's truncated history and precomputes the reusable state.
pub fn prepare_user<T: Real>(
    params: &ModelParams<T>,
    mm: &MultimodalTable,
    user_id: u64,
    history_ids: &[u64],
) -> Result<UserContext<T>> {
    if history_ids.is_empty() {
        return Err(DmfError::EmptyHistory);
    }
    let max = params.config.max_history;
    let recent = if history_ids.len() > max {
        &history_ids[history_ids.len() - max..]
    } else {
        history_ids
    };
    let history_idx: Vec<usize> = recent.iter().map(|&id| params.items.lookup(id)).collect();
    let l = history_idx.len();
    let mut history = Matrix::zeros(l, params.config.embed_dim);
    for (j, &idx) in history_idx.iter().enumerate() {
        history.row_mut(j).copy_from_slice(params.items.row(idx));
    }
    let valid = vec![true; l];
    let (hist_mm, mm_valid, _) = mm.history_matrix(recent);
    let kv = precompute_id_kv(&history, &valid, &params.attn)?;
    Ok(UserContext {
        user_id,
        user_idx: params.profiles.lookup(user_id),
        history_ids: recent.to_vec(),
        history_idx,
        history,
        hist_mm,
        mm_valid,
        kv,
    })
}

fn prepare_candidate<T: Real>(
    params: &ModelParams<T>,
    mm: &MultimodalTable,
    bucketizer: &Bucketizer,
    ctx: &UserContext<T>,
    candidate_id: u64,
) -> PreparedExample {
    let l = ctx.history_idx.len();
    let sim = match mm.get(candidate_id) {
        Some(target_row) => similarity_vector(target_row, &ctx.hist_mm, &ctx.mm_valid)
            .unwrap_or_else(|_| SimilarityVector::all_invalid(l)),
        None => SimilarityVector::all_invalid(l),
    };
    let buckets: Vec<usize> = sim
        .scores
        .iter()
        .zip(&sim.valid)
        .map(|(&c, &v)| if v { bucketizer.bucket(c as f64) } else { 0 })
        .collect();
    let hist_input = histogram_input(
        &sim,
        params.config.histogram_bins,
        params.config.normalize_histogram,
    );
    PreparedExample {
        user_idx: ctx.user_idx,
        target_idx: params.items.lookup(candidate_id),
        history_idx: ctx.history_idx.clone(),
        valid: vec![true; l],
        sim,
        buckets,
        hist_input,
        label: 0,
    }
}

/// Scores a slate of candidates for one user. When `use_cache` is set and
/// the strategy supports it, the context's ID K/V cache is reused across
/// candidates; otherwise every projection is recomputed per candidate,
/// which is also the only honest mode for early fusion.
pub fn score_candidates<T: Real>(
    params: &ModelParams<T>,
    mm: &MultimodalTable,
    bucketizer: &Bucketizer,
    ctx: &UserContext<T>,
    candidate_ids: &[u64],
    use_cache: bool,
) -> Result<Vec<f64>> {
    let reusable = params.config.strategy != Strategy::Early;
    let kv = (use_cache && reusable).then_some(&ctx.kv);
    let mut out = Vec::with_capacity(candidate_ids.len());
    for &cid in candidate_ids {
        let prep = prepare_candidate(params, mm, bucketizer, ctx, cid);
        let cache = forward_example(params, &prep, kv)?;
        out.push(cache.yhat.to_f64());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ReuseCheck {
    pub candidates: usize,
    pub mismatches: usize,
}

impl ReuseCheck {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// Scores every candidate twice -- once through the cached K/V, once fully
/// recomputed -- and counts candidates whose pCTRs are not bit-identical.
/// `inject_fault` perturbs one cached value first to demonstrate the check
/// actually detects divergence.
pub fn reuse_equivalence_check<T: Real>(
    params: &ModelParams<T>,
    mm: &MultimodalTable,
    bucketizer: &Bucketizer,
    ctx: &UserContext<T>,
    candidate_ids: &[u64],
    inject_fault: bool,
) -> Result<ReuseCheck> {
    let mut ctx_used = ctx.clone();
    if inject_fault {
        let v = ctx_used.kv.k_id.get(0, 0);
        ctx_used.kv.k_id.set(0, 0, v + T::from_f64(0.25));
    }
    let cached = score_candidates(params, mm, bucketizer, &ctx_used, candidate_ids, true)?;
    let fresh = score_candidates(params, mm, bucketizer, ctx, candidate_ids, false)?;
    let mismatches = cached
        .iter()
        .zip(&fresh)
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count();
    Ok(ReuseCheck { candidates: candidate_ids.len(), mismatches })
}
