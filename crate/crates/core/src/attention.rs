//! Target-aware attention variants: plain multi-head target attention (TA),
//! DIN scoring, and the three side-information fusion strategies -- early,
//! late, and decoupled (DTA) -- plus the key-only non-invasive ablation.
//!
//! The decoupled path splits K/V into a target-agnostic ID projection
//! (computed once per user, reused across candidates) and a per-candidate
//! bucket-embedding lookup added on top. The cached projections are never
//! mutated; enrichment happens on candidate-local copies.

use crate::bucketing::Bucketizer;
use crate::error::{DmfError, Result};
use crate::features::SimilarityVector;
use crate::mlp::Mlp;
use crate::numerics::{dot, matmul, softmax_masked, Matrix};
use crate::real::Real;

/// Shared projection weights for TA/DTA/late fusion.
#[derive(Debug, Clone)]
pub struct AttentionParams<T: Real> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub heads: usize,
    pub temperature: T,
}

impl<T: Real> AttentionParams<T> {
    pub fn new(w_q: Matrix<T>, w_k: Matrix<T>, w_v: Matrix<T>, heads: usize, temperature: T) -> Result<Self> {
        let d_h = w_q.rows();
        if w_k.rows() != d_h || w_v.rows() != d_h {
            return Err(DmfError::DimensionMismatch {
                op: "attention_params",
                detail: "projection output widths disagree".into(),
            });
        }
        if heads == 0 || !d_h.is_multiple_of(heads) {
            return Err(DmfError::InvalidConfig(format!("hidden {} not divisible by {} heads", d_h, heads)));
        }
        if temperature <= T::zero() {
            return Err(DmfError::InvalidConfig("temperature must be positive".into()));
        }
        Ok(AttentionParams { w_q, w_k, w_v, heads, temperature })
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w_q.cols()
    }
}

/// Projections for the early-fusion variant, whose K/V input width is d+1
/// (each history row concatenated with its raw similarity scalar).
#[derive(Debug, Clone)]
pub struct EarlyFusionParams<T: Real> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub heads: usize,
    pub temperature: T,
}

/// Scalar-to-vector projections for the late-fusion similarity stream.
#[derive(Debug, Clone)]
pub struct SimProjection<T: Real> {
    pub key: Vec<T>,
    pub value: Vec<T>,
}

/// Target-agnostic K/V cache: a pure function of the history and the
/// projection weights, never of the candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct IdKv<T: Real> {
    pub k_id: Matrix<T>,
    pub v_id: Matrix<T>,
    pub valid: Vec<bool>,
}

impl<T: Real> IdKv<T> {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }
}

/// The two M x d_h learnable bucket lookup tables (key and value).
#[derive(Debug, Clone)]
pub struct BucketEmbeddingPair<T: Real> {
    pub e_k: Matrix<T>,
    pub e_v: Matrix<T>,
}

impl<T: Real> BucketEmbeddingPair<T> {
    pub fn zeros(bucket_count: usize, d_h: usize) -> Self {
        BucketEmbeddingPair { e_k: Matrix::zeros(bucket_count, d_h), e_v: Matrix::zeros(bucket_count, d_h) }
    }
}

/// Everything the backward pass needs from one attention evaluation.
#[derive(Debug, Clone)]
pub struct AttnCache<T: Real> {
    pub q_proj: Vec<T>,
    pub keys: Matrix<T>,
    pub values: Matrix<T>,
    /// heads x L attention weights; all-zero when degenerate.
    pub alphas: Matrix<T>,
    pub degenerate: bool,
}

/// Scaled dot-product attention over already-built K/V. Empty valid history
/// yields a zero vector with the degenerate flag set.
pub fn attend<T: Real>(
    q_proj: &[T],
    keys: &Matrix<T>,
    values: &Matrix<T>,
    valid: &[bool],
    heads: usize,
    temperature: T,
) -> Result<(Vec<T>, AttnCache<T>)> {
    let d_h = q_proj.len();
    let len = valid.len();
    if keys.rows() != len || values.rows() != len || keys.cols() != d_h || values.cols() != d_h {
        return Err(DmfError::DimensionMismatch {
            op: "attend",
            detail: format!("L={} d_h={} keys {}x{} values {}x{}", len, d_h, keys.rows(), keys.cols(), values.rows(), values.cols()),
        });
    }
    let head_dim = d_h / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut out = vec![T::zero(); d_h];
    let mut alphas = Matrix::zeros(heads, len);
    let degenerate = !valid.iter().any(|&v| v);
    if !degenerate {
        for h in 0..heads {
            let lo = h * head_dim;
            let hi = lo + head_dim;
            let qh = &q_proj[lo..hi];
            let scores: Vec<T> = (0..len)
                .map(|j| T::from_f64(dot(qh, &keys.row(j)[lo..hi]) * scale))
                .collect();
            let w = softmax_masked(&scores, valid, temperature)?;
            let mut acc = vec![0f64; head_dim];
            for j in 0..len {
                if valid[j] {
                    let a = w[j].to_f64();
                    let vrow = &values.row(j)[lo..hi];
                    for (c, av) in acc.iter_mut().enumerate() {
                        *av += a * vrow[c].to_f64();
                    }
                }
            }
            for c in 0..head_dim {
                out[lo + c] = T::from_f64(acc[c]);
            }
            alphas.row_mut(h).copy_from_slice(&w);
        }
    }
    let cache = AttnCache {
        q_proj: q_proj.to_vec(),
        keys: keys.clone(),
        values: values.clone(),
        alphas,
        degenerate,
    };
    Ok((out, cache))
}

/// Gradients of [`attend`] w.r.t. the projected query and the K/V matrices.
pub fn attend_backward<T: Real>(
    cache: &AttnCache<T>,
    valid: &[bool],
    heads: usize,
    temperature: T,
    d_out: &[T],
) -> (Vec<T>, Matrix<T>, Matrix<T>) {
    let d_h = cache.q_proj.len();
    let len = valid.len();
    let head_dim = d_h / heads;
    let scale = 1.0 / (head_dim as f64).sqrt() / temperature.to_f64();
    let mut d_qp = vec![T::zero(); d_h];
    let mut d_keys = Matrix::zeros(len, d_h);
    let mut d_values = Matrix::zeros(len, d_h);
    if cache.degenerate {
        return (d_qp, d_keys, d_values);
    }
    for h in 0..heads {
        let lo = h * head_dim;
        let hi = lo + head_dim;
        let qh = &cache.q_proj[lo..hi];
        let dout_h = &d_out[lo..hi];
        let w = cache.alphas.row(h);

        // d_alpha_j = dout . v_j ; softmax Jacobian folds in the weighted sum
        let mut d_alpha = vec![0f64; len];
        let mut dotsum = 0f64;
        for j in 0..len {
            if valid[j] {
                let vrow = &cache.values.row(j)[lo..hi];
                let da = dot(dout_h, vrow);
                d_alpha[j] = da;
                dotsum += w[j].to_f64() * da;
            }
        }
        for j in 0..len {
            if !valid[j] {
                continue;
            }
            let aj = w[j].to_f64();
            // value grad
            {
                let dvrow = &mut d_values.row_mut(j)[lo..hi];
                for c in 0..head_dim {
                    dvrow[c] = dvrow[c] + T::from_f64(aj * dout_h[c].to_f64());
                }
            }
            // score grad, then through the scale/temperature factor
            let de = aj * (d_alpha[j] - dotsum) * scale;
            let krow = cache.keys.row(j);
            for c in 0..head_dim {
                d_qp[lo + c] = d_qp[lo + c] + T::from_f64(de * krow[lo + c].to_f64());
            }
            let dkrow = &mut d_keys.row_mut(j)[lo..hi];
            for c in 0..head_dim {
                dkrow[c] = dkrow[c] + T::from_f64(de * qh[c].to_f64());
            }
        }
    }
    (d_qp, d_keys, d_values)
}

/// K_id = S W_k^T, V_id = S W_v^T; target-independent and reusable.
pub fn precompute_id_kv<T: Real>(
    history: &Matrix<T>,
    valid: &[bool],
    p: &AttentionParams<T>,
) -> Result<IdKv<T>> {
    let k_id = matmul(history, &p.w_k.transpose())?;
    let v_id = matmul(history, &p.w_v.transpose())?;
    Ok(IdKv { k_id, v_id, valid: valid.to_vec() })
}

/// Plain MHTA forward; returns the pooled interest vector and the cache.
pub fn ta_forward<T: Real>(
    query: &[T],
    history: &Matrix<T>,
    valid: &[bool],
    p: &AttentionParams<T>,
) -> Result<(Vec<T>, AttnCache<T>)> {
    let kv = precompute_id_kv(history, valid, p)?;
    ta_forward_with_kv(query, &kv, p)
}

/// MHTA over a precomputed (possibly cached) IdKv.
pub fn ta_forward_with_kv<T: Real>(
    query: &[T],
    kv: &IdKv<T>,
    p: &AttentionParams<T>,
) -> Result<(Vec<T>, AttnCache<T>)> {
    let q_proj = crate::numerics::matvec(&p.w_q, query)?;
    attend(&q_proj, &kv.k_id, &kv.v_id, &kv.valid, p.heads, p.temperature)
}

/// Builds the candidate-local enriched K/V for DTA. Positions without a
/// similarity score are left unenriched; the cached matrices are not
/// modified.
pub fn enrich_kv<T: Real>(
    kv: &IdKv<T>,
    sim: &SimilarityVector,
    bz: &Bucketizer,
    emb: &BucketEmbeddingPair<T>,
    enrich_value: bool,
) -> Result<(Matrix<T>, Matrix<T>, Vec<usize>)> {
    if sim.len() != kv.len() {
        return Err(DmfError::DimensionMismatch {
            op: "enrich_kv",
            detail: format!("similarity length {} vs cached K/V length {}", sim.len(), kv.len()),
        });
    }
    let buckets: Vec<usize> = sim
        .scores
        .iter()
        .zip(&sim.valid)
        .map(|(&c, &v)| if v { bz.bucket(c as f64) } else { 0 })
        .collect();
    let (keys, values) = enrich_kv_indexed(kv, &buckets, emb, enrich_value)?;
    Ok((keys, values, buckets))
}

/// Same enrichment given precomputed 1-based bucket indices (0 = skip).
pub fn enrich_kv_indexed<T: Real>(
    kv: &IdKv<T>,
    buckets: &[usize],
    emb: &BucketEmbeddingPair<T>,
    enrich_value: bool,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if buckets.len() != kv.len() {
        return Err(DmfError::DimensionMismatch {
            op: "enrich_kv_indexed",
            detail: format!("bucket list length {} vs cached K/V length {}", buckets.len(), kv.len()),
        });
    }
    let mut keys = kv.k_id.clone();
    let mut values = kv.v_id.clone();
    for (j, &b) in buckets.iter().enumerate() {
        if b == 0 {
            continue;
        }
        if b > emb.e_k.rows() {
            return Err(DmfError::DimensionMismatch {
                op: "enrich_kv_indexed",
                detail: format!(
                    "bucket index {} exceeds embedding table with {} rows",
                    b,
                    emb.e_k.rows()
                ),
            });
        }
        let krow = keys.row_mut(j);
        let ek = emb.e_k.row(b - 1);
        for c in 0..krow.len() {
            krow[c] = krow[c] + ek[c];
        }
        if enrich_value {
            let vrow = values.row_mut(j);
            let ev = emb.e_v.row(b - 1);
            for c in 0..vrow.len() {
                vrow[c] = vrow[c] + ev[c];
            }
        }
    }
    Ok((keys, values))
}

/// Decoupled target attention: cached ID K/V plus per-candidate bucket
/// embedding lookups, then scaled dot-product attention.
pub fn dta_forward<T: Real>(
    query: &[T],
    kv: &IdKv<T>,
    sim: &SimilarityVector,
    bz: &Bucketizer,
    emb: &BucketEmbeddingPair<T>,
    p: &AttentionParams<T>,
) -> Result<(Vec<T>, AttnCache<T>, Vec<usize>)> {
    let (keys, values, buckets) = enrich_kv(kv, sim, bz, emb, true)?;
    let q_proj = crate::numerics::matvec(&p.w_q, query)?;
    let (out, cache) = attend(&q_proj, &keys, &values, &kv.valid, p.heads, p.temperature)?;
    Ok((out, cache, buckets))
}

/// Ablation that enriches only the key path; values stay ID-only.
pub fn noninvasive_forward<T: Real>(
    query: &[T],
    kv: &IdKv<T>,
    sim: &SimilarityVector,
    bz: &Bucketizer,
    emb: &BucketEmbeddingPair<T>,
    p: &AttentionParams<T>,
) -> Result<(Vec<T>, AttnCache<T>, Vec<usize>)> {
    let (keys, values, buckets) = enrich_kv(kv, sim, bz, emb, false)?;
    let q_proj = crate::numerics::matvec(&p.w_q, query)?;
    let (out, cache) = attend(&q_proj, &keys, &values, &kv.valid, p.heads, p.temperature)?;
    Ok((out, cache, buckets))
}

/// Concatenates each history row with its raw similarity scalar before the
/// K/V projections; the full projection is recomputed per candidate.
pub fn concat_history_sim<T: Real>(history: &Matrix<T>, sim: &SimilarityVector) -> Matrix<T> {
    let d = history.cols();
    let mut out = Matrix::zeros(history.rows(), d + 1);
    for j in 0..history.rows() {
        out.row_mut(j)[..d].copy_from_slice(history.row(j));
        out.row_mut(j)[d] = if sim.valid[j] { T::from_f32(sim.scores[j]) } else { T::zero() };
    }
    out
}

pub fn early_fusion_forward<T: Real>(
    query: &[T],
    history: &Matrix<T>,
    valid: &[bool],
    sim: &SimilarityVector,
    p: &EarlyFusionParams<T>,
) -> Result<(Vec<T>, AttnCache<T>, Matrix<T>)> {
    if sim.len() != history.rows() {
        return Err(DmfError::DimensionMismatch {
            op: "early_fusion_forward",
            detail: format!("similarity length {} vs history {}", sim.len(), history.rows()),
        });
    }
    let fused = concat_history_sim(history, sim);
    let keys = matmul(&fused, &p.w_k.transpose())?;
    let values = matmul(&fused, &p.w_v.transpose())?;
    let q_proj = crate::numerics::matvec(&p.w_q, query)?;
    let (out, cache) = attend(&q_proj, &keys, &values, valid, p.heads, p.temperature)?;
    Ok((out, cache, fused))
}

/// One attention pass over cached ID K/V and one over the linearly projected
/// similarity stream, concatenated to 2*d_h.
pub fn late_fusion_forward<T: Real>(
    query: &[T],
    kv: &IdKv<T>,
    sim: &SimilarityVector,
    p: &AttentionParams<T>,
    sim_proj: &SimProjection<T>,
) -> Result<(Vec<T>, AttnCache<T>, AttnCache<T>)> {
    if sim.len() != kv.len() {
        return Err(DmfError::DimensionMismatch {
            op: "late_fusion_forward",
            detail: format!("similarity length {} vs cached K/V length {}", sim.len(), kv.len()),
        });
    }
    let d_h = p.hidden_dim();
    let q_proj = crate::numerics::matvec(&p.w_q, query)?;
    let (out_id, cache_id) = attend(&q_proj, &kv.k_id, &kv.v_id, &kv.valid, p.heads, p.temperature)?;
    let mut k_sim = Matrix::zeros(sim.len(), d_h);
    let mut v_sim = Matrix::zeros(sim.len(), d_h);
    for j in 0..sim.len() {
        let c = if sim.valid[j] { T::from_f32(sim.scores[j]) } else { T::zero() };
        let kr = k_sim.row_mut(j);
        let vr = v_sim.row_mut(j);
        for i in 0..d_h {
            kr[i] = c * sim_proj.key[i];
            vr[i] = c * sim_proj.value[i];
        }
    }
    let (out_sim, cache_sim) = attend(&q_proj, &k_sim, &v_sim, &kv.valid, p.heads, p.temperature)?;
    let mut out = out_id;
    out.extend_from_slice(&out_sim);
    Ok((out, cache_id, cache_sim))
}

/// DIN activation-unit score: MLP over `[q; s; q (.) s; q - s]`.
pub fn din_score<T: Real>(query: &[T], item: &[T], mlp: &Mlp<T>) -> Result<T> {
    let input = din_input(query, item);
    crate::mlp::check_widths(mlp, input.len())?;
    Ok(mlp.forward(&input)[0])
}

/// The DIN concat features, exposed so tests can check the layout directly.
pub fn din_input<T: Real>(query: &[T], item: &[T]) -> Vec<T> {
    debug_assert_eq!(query.len(), item.len());
    let mut input = Vec::with_capacity(4 * query.len());
    input.extend_from_slice(query);
    input.extend_from_slice(item);
    input.extend(query.iter().zip(item).map(|(&a, &b)| a * b));
    input.extend(query.iter().zip(item).map(|(&a, &b)| a - b));
    input
}

/// Gradient of a row-projection `Y = X W^T` given `d_Y`: accumulates
/// `d_W += d_Y^T X` and `d_X += d_Y W`.
#[allow(clippy::needless_range_loop)]
pub fn proj_backward<T: Real>(
    d_out_rows: &Matrix<T>,
    input: &Matrix<T>,
    w: &Matrix<T>,
    d_w: &mut Matrix<T>,
    d_input: &mut Matrix<T>,
) {
    let rows = input.rows();
    let (d_h, d_in) = (w.rows(), w.cols());
    debug_assert_eq!(d_out_rows.cols(), d_h);
    debug_assert_eq!(input.cols(), d_in);
    for j in 0..rows {
        let dy = d_out_rows.row(j);
        let x = input.row(j);
        for r in 0..d_h {
            let g = dy[r];
            if g == T::zero() {
                continue;
            }
            let dwrow = d_w.row_mut(r);
            for c in 0..d_in {
                dwrow[c] = dwrow[c] + g * x[c];
            }
        }
        let dxrow = d_input.row_mut(j);
        for r in 0..d_h {
            let g = dy[r];
            if g == T::zero() {
                continue;
            }
            let wrow = w.row(r);
            for c in 0..d_in {
                dxrow[c] = dxrow[c] + g * wrow[c];
            }
        }
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn params(d: usize, d_h: usize, heads: usize, seed: u64) -> AttentionParams<f64> {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let mk = |r: usize, c: usize, next: &mut dyn FnMut() -> f64| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| next() * 0.5).collect()).unwrap()
        };
        AttentionParams::new(mk(d_h, d, &mut next), mk(d_h, d, &mut next), mk(d_h, d, &mut next), heads, 1.0).unwrap()
    }

    fn history(l: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        Matrix::from_vec(l, d, (0..l * d).map(|_| next()).collect()).unwrap()
    }

    #[test]
    fn single_valid_position_returns_its_value() {
        let p = params(2, 4, 2, 3);
        let h = history(1, 2, 5);
        let (out, _) = ta_forward(&[0.3, -0.8], &h, &[true], &p).unwrap();
        let kv = precompute_id_kv(&h, &[true], &p).unwrap();
        for c in 0..4 {
            assert!((out[c] - kv.v_id.get(0, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let p = params(2, 4, 1, 7);
        let row = [0.4, -0.2];
        let mut h = Matrix::zeros(3, 2);
        for j in 0..3 {
            h.row_mut(j).copy_from_slice(&row);
        }
        let (_, cache) = ta_forward(&[1.0, 0.5], &h, &[true; 3], &p).unwrap();
        for j in 0..3 {
            assert!((cache.alphas.get(0, j) - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ta_matches_scalar_oracle() {
        // L=3, d=2, one head: evaluate the weighted-sum definition by hand
        let p = params(2, 2, 1, 11);
        let h = history(3, 2, 13);
        let q = [0.9, -0.4];
        let valid = [true, true, true];
        let (out, _) = ta_forward(&q, &h, &valid, &p).unwrap();

        let qp: Vec<f64> = (0..2).map(|i| dot(p.w_q.row(i), &q)).collect();
        let mut ks = vec![];
        let mut vs = vec![];
        for j in 0..3 {
            ks.push((0..2).map(|i| dot(p.w_k.row(i), h.row(j))).collect::<Vec<_>>());
            vs.push((0..2).map(|i| dot(p.w_v.row(i), h.row(j))).collect::<Vec<_>>());
        }
        let scale = 1.0 / (2f64).sqrt();
        let e: Vec<f64> = ks.iter().map(|k| (qp[0] * k[0] + qp[1] * k[1]) * scale).collect();
        let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = e.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut expect = [0.0f64; 2];
        for j in 0..3 {
            for c in 0..2 {
                expect[c] += exps[j] / z * vs[j][c];
            }
        }
        for c in 0..2 {
            assert!((out[c] - expect[c]).abs() < 1e-5);
        }
    }

    #[test]
    fn empty_history_degenerates_to_zero() {
        let p = params(2, 4, 2, 17);
        let h = history(2, 2, 19);
        let (out, cache) = ta_forward(&[0.1, 0.2], &h, &[false, false], &p).unwrap();
        assert!(cache.degenerate);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn precompute_identity_projection() {
        let h = history(4, 3, 23);
        let p = AttentionParams::new(Matrix::identity(3), Matrix::identity(3), Matrix::identity(3), 1, 1.0).unwrap();
        let kv = precompute_id_kv(&h, &[true; 4], &p).unwrap();
        assert_eq!(kv.k_id, h);
        assert_eq!(kv.v_id, h);
    }

    #[test]
    fn zero_bucket_embeddings_reduce_dta_to_ta() {
        let p = params(3, 4, 2, 29);
        let h = history(5, 3, 31);
        let valid = [true; 5];
        let kv = precompute_id_kv(&h, &valid, &p).unwrap();
        let bz = Bucketizer::from_boundaries(vec![0.0]).unwrap();
        let emb = BucketEmbeddingPair::zeros(2, 4);
        let sim = SimilarityVector { scores: vec![0.5, -0.5, 0.2, -0.9, 0.7], valid: valid.to_vec() };
        let q = [0.2, 0.4, -0.1];
        let (dta, _, _) = dta_forward(&q, &kv, &sim, &bz, &emb, &p).unwrap();
        let (ta, _) = ta_forward_with_kv(&q, &kv, &p).unwrap();
        assert_eq!(dta, ta);
    }

    #[test]
    fn dta_single_position_is_enriched_value() {
        let p = params(2, 4, 1, 37);
        let h = history(1, 2, 41);
        let kv = precompute_id_kv(&h, &[true], &p).unwrap();
        let bz = Bucketizer::from_boundaries(vec![0.0]).unwrap();
        let mut emb = BucketEmbeddingPair::zeros(2, 4);
        emb.e_v.row_mut(1).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let sim = SimilarityVector { scores: vec![0.6], valid: vec![true] };
        let (out, _, buckets) = dta_forward(&[0.3, 0.3], &kv, &sim, &bz, &emb, &p).unwrap();
        assert_eq!(buckets, vec![2]);
        for c in 0..4 {
            assert!((out[c] - (kv.v_id.get(0, c) + emb.e_v.get(1, c))).abs() < 1e-12);
        }
    }

    #[test]
    fn dta_length_mismatch_is_fatal() {
        let p = params(2, 4, 1, 43);
        let h = history(3, 2, 47);
        let kv = precompute_id_kv(&h, &[true; 3], &p).unwrap();
        let bz = Bucketizer::from_boundaries(vec![0.0]).unwrap();
        let emb = BucketEmbeddingPair::zeros(2, 4);
        let sim = SimilarityVector { scores: vec![0.1], valid: vec![true] };
        assert!(dta_forward(&[0.1, 0.1], &kv, &sim, &bz, &emb, &p).is_err());
    }

    #[test]
    fn noninvasive_equals_dta_with_zero_value_table() {
        let p = params(3, 4, 2, 53);
        let h = history(4, 3, 59);
        let kv = precompute_id_kv(&h, &[true; 4], &p).unwrap();
        let bz = Bucketizer::from_boundaries(vec![-0.3, 0.3]).unwrap();
        let mut emb = BucketEmbeddingPair::zeros(3, 4);
        for (i, x) in emb.e_k.data_mut().iter_mut().enumerate() {
            *x = (i as f64) * 0.01 - 0.05;
        }
        let sim = SimilarityVector { scores: vec![-0.8, 0.0, 0.4, 0.9], valid: vec![true; 4] };
        let q = [0.5, -0.2, 0.8];
        let (a, _, _) = noninvasive_forward(&q, &kv, &sim, &bz, &emb, &p).unwrap();
        let (b, _, _) = dta_forward(&q, &kv, &sim, &bz, &emb, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_fusion_with_zero_sim_column_equals_ta() {
        let base = params(3, 4, 2, 61);
        let h = history(4, 3, 67);
        // pad the K/V projections with a zero column for the sim scalar
        let pad = |w: &Matrix<f64>| {
            let mut out = Matrix::zeros(4, 4);
            for r in 0..4 {
                out.row_mut(r)[..3].copy_from_slice(w.row(r));
            }
            out
        };
        let early = EarlyFusionParams {
            w_q: base.w_q.clone(),
            w_k: pad(&base.w_k),
            w_v: pad(&base.w_v),
            heads: 2,
            temperature: 1.0,
        };
        let sim = SimilarityVector { scores: vec![0.0; 4], valid: vec![true; 4] };
        let q = [0.9, 0.1, -0.6];
        let (a, _, _) = early_fusion_forward(&q, &h, &[true; 4], &sim, &early).unwrap();
        let (b, _) = ta_forward(&q, &h, &[true; 4], &base).unwrap();
        for c in 0..4 {
            assert!((a[c] - b[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn early_fusion_is_target_aware() {
        let d = 3;
        let base = params(d, 4, 2, 71);
        let early = EarlyFusionParams {
            w_q: base.w_q.clone(),
            w_k: history(4, d + 1, 73),
            w_v: history(4, d + 1, 79),
            heads: 2,
            temperature: 1.0,
        };
        let h = history(4, d, 83);
        let q = [0.4, 0.4, 0.4];
        let sim_a = SimilarityVector { scores: vec![0.9, -0.1, 0.3, 0.0], valid: vec![true; 4] };
        let sim_b = SimilarityVector { scores: vec![-0.9, 0.1, -0.3, 0.5], valid: vec![true; 4] };
        let (a, _, _) = early_fusion_forward(&q, &h, &[true; 4], &sim_a, &early).unwrap();
        let (b, _, _) = early_fusion_forward(&q, &h, &[true; 4], &sim_b, &early).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn late_fusion_first_half_is_ta() {
        let p = params(3, 4, 2, 89);
        let h = history(4, 3, 97);
        let kv = precompute_id_kv(&h, &[true; 4], &p).unwrap();
        let sim = SimilarityVector { scores: vec![0.4, -0.6, 0.1, 0.8], valid: vec![true; 4] };
        let proj = SimProjection { key: vec![0.3; 4], value: vec![-0.2; 4] };
        let q = [1.0, 0.0, -1.0];
        let (out, _, _) = late_fusion_forward(&q, &kv, &sim, &p, &proj).unwrap();
        let (ta, _) = ta_forward_with_kv(&q, &kv, &p).unwrap();
        assert_eq!(&out[..4], &ta[..]);

        let zero_proj = SimProjection { key: vec![0.0; 4], value: vec![0.0; 4] };
        let (out0, _, _) = late_fusion_forward(&q, &kv, &sim, &p, &zero_proj).unwrap();
        assert!(out0[4..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn din_input_layout() {
        let q = [1.0f64, 2.0];
        let s = [3.0f64, -1.0];
        assert_eq!(din_input(&q, &s), vec![1.0, 2.0, 3.0, -1.0, 3.0, -2.0, -2.0, 3.0]);
        // q = s: third block q*q, fourth block zeros
        let same = din_input(&q, &q);
        assert_eq!(&same[4..6], &[1.0, 4.0]);
        assert_eq!(&same[6..8], &[0.0, 0.0]);
    }

    #[test]
    fn din_score_zero_inputs() {
        let mlp = Mlp::<f64>::zeros(&[8, 4, 1]);
        let s = din_score(&[0.0; 2], &[0.0; 2], &mlp).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn permutation_equivariance() {
        let p = params(3, 4, 2, 101);
        let h = history(5, 3, 103);
        let valid = [true, true, false, true, true];
        let sim = SimilarityVector {
            scores: vec![0.3, -0.2, 0.0, 0.8, -0.6],
            valid: valid.to_vec(),
        };
        let bz = Bucketizer::from_boundaries(vec![-0.4, 0.0, 0.4]).unwrap();
        let mut emb = BucketEmbeddingPair::zeros(4, 4);
        for (i, x) in emb.e_k.data_mut().iter_mut().enumerate() {
            *x = (i % 7) as f64 * 0.03;
        }
        for (i, x) in emb.e_v.data_mut().iter_mut().enumerate() {
            *x = (i % 5) as f64 * -0.02;
        }
        let q = [0.1, 0.9, -0.5];
        let kv = precompute_id_kv(&h, &valid, &p).unwrap();
        let (base, _, _) = dta_forward(&q, &kv, &sim, &bz, &emb, &p).unwrap();

        let perm = [4usize, 2, 0, 1, 3];
        let mut h2 = Matrix::zeros(5, 3);
        let mut valid2 = [false; 5];
        let mut scores2 = vec![0.0f32; 5];
        for (newj, &oldj) in perm.iter().enumerate() {
            h2.row_mut(newj).copy_from_slice(h.row(oldj));
            valid2[newj] = valid[oldj];
            scores2[newj] = sim.scores[oldj];
        }
        let sim2 = SimilarityVector { scores: scores2, valid: valid2.to_vec() };
        let kv2 = precompute_id_kv(&h2, &valid2, &p).unwrap();
        let (permuted, _, _) = dta_forward(&q, &kv2, &sim2, &bz, &emb, &p).unwrap();
        for c in 0..4 {
            assert!((base[c] - permuted[c]).abs() < 1e-6);
        }
    }
}
