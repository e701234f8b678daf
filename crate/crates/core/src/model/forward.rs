use crate::attention::{
    attend, early_fusion_forward, enrich_kv_indexed, late_fusion_forward, precompute_id_kv,
    ta_forward_with_kv, AttnCache, IdKv,
};
use crate::bucketing::Bucketizer;
use crate::data::TrainExample;
use crate::error::{DmfError, Result};
use crate::features::{histogram_input, similarity_vector, MultimodalTable, SimilarityVector};
use crate::mlp::MlpCache;
use crate::model::{ModelParams, Strategy};
use crate::numerics::{matvec, Matrix};
use crate::real::Real;

/// One interaction resolved against the vocabulary, with frozen inputs
/// (similarity scores, bucket indices, histogram) precomputed once.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub user_idx: usize,
    pub target_idx: usize,
    pub history_idx: Vec<usize>,
    /// Attention mask; all history positions carry ID embeddings.
    pub valid: Vec<bool>,
    pub sim: SimilarityVector,
    /// 1-based bucket per position; 0 means no multimodal coverage.
    pub buckets: Vec<usize>,
    pub hist_input: Vec<f64>,
    pub label: u8,
}

/// Resolves ids and freezes the multimodal-derived inputs for one example.
pub fn prepare_example<T: Real>(
    ex: &TrainExample,
    params: &ModelParams<T>,
    mm: &MultimodalTable,
    bucketizer: &Bucketizer,
) -> Result<PreparedExample> {
    if ex.history.is_empty() {
        return Err(DmfError::EmptyHistory);
    }
    let history_idx: Vec<usize> = ex.history.iter().map(|&id| params.items.lookup(id)).collect();
    let valid = vec![true; history_idx.len()];

    let sim = match mm.get(ex.target_id) {
        Some(target_row) => {
            let (hist_mm, mm_valid, _) = mm.history_matrix(&ex.history);
            similarity_vector(target_row, &hist_mm, &mm_valid)?
        }
        // Target without multimodal coverage: no similarity evidence at all.
        None => SimilarityVector {
            scores: vec![0.0; ex.history.len()],
            valid: vec![false; ex.history.len()],
        },
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

    Ok(PreparedExample {
        user_idx: params.profiles.lookup(ex.user_id),
        target_idx: params.items.lookup(ex.target_id),
        history_idx,
        valid,
        sim,
        buckets,
        hist_input,
        label: ex.label,
    })
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Real> {
    pub q_emb: Vec<T>,
    pub profile: Vec<T>,
    /// L x d gathered history embeddings.
    pub history: Matrix<T>,
    pub attn_main: Option<AttnCache<T>>,
    pub attn_sim: Option<AttnCache<T>>,
    /// L x (d+1) concatenated input (early fusion only).
    pub fused_input: Option<Matrix<T>>,
    pub hist_cache: Option<MlpCache<T>>,
    pub r_me: Vec<T>,
    pub r_mc: Vec<T>,
    pub r_u: Vec<T>,
    pub pred_cache: MlpCache<T>,
    pub logit: T,
    pub yhat: T,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy over probabilities, clamped to [1e-7, 1-1e-7].
pub fn bce_loss(labels: &[u8], probs: &[f64]) -> Result<f64> {
    if labels.len() != probs.len() || labels.is_empty() {
        return Err(DmfError::DimensionMismatch {
            op: "bce_loss",
            detail: format!("{} labels vs {} probabilities", labels.len(), probs.len()),
        });
    }
    let mut acc = 0.0f64;
    for (&y, &p) in labels.iter().zip(probs) {
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        acc -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(acc / labels.len() as f64)
}

/// Numerically stable BCE straight from the logit.
pub fn bce_loss_logit(label: u8, logit: f64) -> f64 {
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    softplus - label as f64 * logit
}

/// CMM fusion: r_u = alpha * r_me + (1 - alpha) * r_mc.
pub fn cmm_fuse<T: Real>(r_me: &[T], r_mc: &[T], alpha: f64) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DmfError::InvalidConfig(format!("alpha {} outside [0,1]", alpha)));
    }
    if r_me.len() != r_mc.len() {
        return Err(DmfError::DimensionMismatch {
            op: "cmm_fuse",
            detail: format!("{} vs {}", r_me.len(), r_mc.len()),
        });
    }
    let a = T::from_f64(alpha);
    let b = T::from_f64(1.0 - alpha);
    Ok(r_me.iter().zip(r_mc).map(|(&x, &y)| a * x + b * y).collect())
}

/// Full forward pass for one prepared example. A precomputed target-agnostic
/// `IdKv` may be supplied for the strategies that can reuse one.
pub fn forward_example<T: Real>(
    params: &ModelParams<T>,
    prep: &PreparedExample,
    cached_kv: Option<&IdKv<T>>,
) -> Result<ForwardCache<T>> {
    let cfg = &params.config;
    let q_emb = params.items.row(prep.target_idx).to_vec();
    let profile = params.profiles.row(prep.user_idx).to_vec();

    let l = prep.history_idx.len();
    let d = cfg.embed_dim;
    let mut history = Matrix::zeros(l, d);
    for (j, &idx) in prep.history_idx.iter().enumerate() {
        history.row_mut(j).copy_from_slice(params.items.row(idx));
    }

    let attn_main;
    let mut attn_sim = None;
    let mut fused_input = None;
    let r_me: Vec<T>;

    match cfg.strategy {
        Strategy::Ta => {
            let owned;
            let kv = match cached_kv {
                Some(kv) => kv,
                None => {
                    owned = precompute_id_kv(&history, &prep.valid, &params.attn)?;
                    &owned
                }
            };
            let (out, cache) = ta_forward_with_kv(&q_emb, kv, &params.attn)?;
            r_me = out;
            attn_main = Some(cache);
        }
        Strategy::Decoupled | Strategy::NonInvasive | Strategy::Dmf => {
            let owned;
            let kv = match cached_kv {
                Some(kv) => kv,
                None => {
                    owned = precompute_id_kv(&history, &prep.valid, &params.attn)?;
                    &owned
                }
            };
            let emb = params.bucket_emb.as_ref().ok_or_else(|| {
                DmfError::InvalidConfig("bucket embeddings missing for bucketed strategy".into())
            })?;
            let enrich_value = cfg.strategy != Strategy::NonInvasive;
            let (keys, values) = enrich_kv_indexed(kv, &prep.buckets, emb, enrich_value)?;
            let q_proj = matvec(&params.attn.w_q, &q_emb)?;
            let (out, cache) = attend(
                &q_proj,
                &keys,
                &values,
                &kv.valid,
                params.attn.heads,
                params.attn.temperature,
            )?;
            r_me = out;
            attn_main = Some(cache);
        }
        Strategy::Early => {
            let early = params.early.as_ref().ok_or_else(|| {
                DmfError::InvalidConfig("early-fusion parameters missing".into())
            })?;
            let (out, cache, fused) =
                early_fusion_forward(&q_emb, &history, &prep.valid, &prep.sim, early)?;
            r_me = out;
            attn_main = Some(cache);
            fused_input = Some(fused);
        }
        Strategy::Late => {
            let proj = params.sim_proj.as_ref().ok_or_else(|| {
                DmfError::InvalidConfig("similarity projection missing for late fusion".into())
            })?;
            let owned;
            let kv = match cached_kv {
                Some(kv) => kv,
                None => {
                    owned = precompute_id_kv(&history, &prep.valid, &params.attn)?;
                    &owned
                }
            };
            let (out, id_cache, sim_cache) =
                late_fusion_forward(&q_emb, kv, &prep.sim, &params.attn, proj)?;
            r_me = out;
            attn_main = Some(id_cache);
            attn_sim = Some(sim_cache);
        }
    }

    // Modality-centric path (histogram -> MLP) plus CMM fusion.
    let (r_mc, hist_cache, r_u) = if cfg.strategy.uses_histogram() {
        let hist_mlp = params.hist_mlp.as_ref().ok_or_else(|| {
            DmfError::InvalidConfig("histogram MLP missing for dmf strategy".into())
        })?;
        crate::mlp::check_widths(hist_mlp, prep.hist_input.len())?;
        let input: Vec<T> = prep.hist_input.iter().map(|&x| T::from_f64(x)).collect();
        let (r_mc, cache) = hist_mlp.forward_cached(&input);
        let r_u = cmm_fuse(&r_me, &r_mc, cfg.alpha)?;
        (r_mc, Some(cache), r_u)
    } else {
        (Vec::new(), None, r_me.clone())
    };

    let mut pred_input = Vec::with_capacity(cfg.prediction_input_dim());
    pred_input.extend_from_slice(&r_u);
    pred_input.extend_from_slice(&q_emb);
    pred_input.extend_from_slice(&profile);
    crate::mlp::check_widths(&params.pred_mlp, pred_input.len())?;
    let (pred_out, pred_cache) = params.pred_mlp.forward_cached(&pred_input);
    let logit = pred_out[0];
    let yhat = T::from_f64(sigmoid(logit.to_f64()));

    Ok(ForwardCache {
        q_emb,
        profile,
        history,
        attn_main,
        attn_sim,
        fused_input,
        hist_cache,
        r_me,
        r_mc,
        r_u,
        pred_cache,
        logit,
        yhat,
    })
}

/// Convenience scorer: prepares and runs one raw example, returning pCTR.
pub fn predict_ctr<T: Real>(
    ex: &TrainExample,
    params: &ModelParams<T>,
    mm: &MultimodalTable,
    bucketizer: &Bucketizer,
) -> Result<f64> {
    let prep = prepare_example(ex, params, mm, bucketizer)?;
    let cache = forward_example(params, &prep, None)?;
    Ok(cache.yhat.to_f64())
}
