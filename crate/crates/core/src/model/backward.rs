use crate::attention::{attend_backward, proj_backward};
use crate::error::{DmfError, Result};
use crate::mlp::MlpGrads;
use crate::model::forward::{ForwardCache, PreparedExample};
use crate::model::{ModelParams, Strategy};
use crate::numerics::Matrix;
use crate::real::Real;

/// Parameter-shaped gradient accumulator, mirroring [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelGrads<T: Real> {
    pub item_emb: Matrix<T>,
    pub profile_emb: Matrix<T>,
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    /// (w_q, w_k, w_v) for the early-fusion projections.
    pub early: Option<(Matrix<T>, Matrix<T>, Matrix<T>)>,
    /// (key, value) similarity projection vectors.
    pub sim_proj: Option<(Vec<T>, Vec<T>)>,
    /// (e_k, e_v) bucket tables.
    pub bucket: Option<(Matrix<T>, Matrix<T>)>,
    pub hist: Option<MlpGrads<T>>,
    pub pred: MlpGrads<T>,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros_like(p: &ModelParams<T>) -> Self {
        ModelGrads {
            item_emb: Matrix::zeros(p.items.rows.rows(), p.items.rows.cols()),
            profile_emb: Matrix::zeros(p.profiles.rows.rows(), p.profiles.rows.cols()),
            w_q: Matrix::zeros(p.attn.w_q.rows(), p.attn.w_q.cols()),
            w_k: Matrix::zeros(p.attn.w_k.rows(), p.attn.w_k.cols()),
            w_v: Matrix::zeros(p.attn.w_v.rows(), p.attn.w_v.cols()),
            early: p.early.as_ref().map(|e| {
                (
                    Matrix::zeros(e.w_q.rows(), e.w_q.cols()),
                    Matrix::zeros(e.w_k.rows(), e.w_k.cols()),
                    Matrix::zeros(e.w_v.rows(), e.w_v.cols()),
                )
            }),
            sim_proj: p
                .sim_proj
                .as_ref()
                .map(|s| (vec![T::zero(); s.key.len()], vec![T::zero(); s.value.len()])),
            bucket: p.bucket_emb.as_ref().map(|b| {
                (
                    Matrix::zeros(b.e_k.rows(), b.e_k.cols()),
                    Matrix::zeros(b.e_v.rows(), b.e_v.cols()),
                )
            }),
            hist: p.hist_mlp.as_ref().map(|m| m.grads_like()),
            pred: p.pred_mlp.grads_like(),
        }
    }

    pub fn zero(&mut self) {
        self.visit_tensors_mut(|_, t| t.iter_mut().for_each(|x| *x = T::zero()));
    }

    /// Same fixed visitation order as [`ModelParams::visit_tensors_mut`].
    pub fn visit_tensors_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        f("item_emb", self.item_emb.data_mut());
        f("profile_emb", self.profile_emb.data_mut());
        f("attn.w_q", self.w_q.data_mut());
        f("attn.w_k", self.w_k.data_mut());
        f("attn.w_v", self.w_v.data_mut());
        if let Some((q, k, v)) = &mut self.early {
            f("early.w_q", q.data_mut());
            f("early.w_k", k.data_mut());
            f("early.w_v", v.data_mut());
        }
        if let Some((k, v)) = &mut self.sim_proj {
            f("sim_proj.key", k);
            f("sim_proj.value", v);
        }
        if let Some((ek, ev)) = &mut self.bucket {
            f("bucket.e_k", ek.data_mut());
            f("bucket.e_v", ev.data_mut());
        }
        if let Some(h) = &mut self.hist {
            for (l, layer) in h.layers.iter_mut().enumerate() {
                f(&format!("hist.w{}", l), layer.w.data_mut());
                f(&format!("hist.b{}", l), &mut layer.b);
            }
            for (l, s) in h.slopes.iter_mut().enumerate() {
                f(&format!("hist.slope{}", l), s);
            }
        }
        for (l, layer) in self.pred.layers.iter_mut().enumerate() {
            f(&format!("pred.w{}", l), layer.w.data_mut());
            f(&format!("pred.b{}", l), &mut layer.b);
        }
        for (l, s) in self.pred.slopes.iter_mut().enumerate() {
            f(&format!("pred.slope{}", l), s);
        }
    }

    /// Borrowed views of every tensor in visitation order.
    pub fn tensor_slices(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = vec![
            ("item_emb".into(), self.item_emb.data()),
            ("profile_emb".into(), self.profile_emb.data()),
            ("attn.w_q".into(), self.w_q.data()),
            ("attn.w_k".into(), self.w_k.data()),
            ("attn.w_v".into(), self.w_v.data()),
        ];
        if let Some((q, k, v)) = &self.early {
            out.push(("early.w_q".into(), q.data()));
            out.push(("early.w_k".into(), k.data()));
            out.push(("early.w_v".into(), v.data()));
        }
        if let Some((k, v)) = &self.sim_proj {
            out.push(("sim_proj.key".into(), k.as_slice()));
            out.push(("sim_proj.value".into(), v.as_slice()));
        }
        if let Some((ek, ev)) = &self.bucket {
            out.push(("bucket.e_k".into(), ek.data()));
            out.push(("bucket.e_v".into(), ev.data()));
        }
        if let Some(h) = &self.hist {
            for (l, layer) in h.layers.iter().enumerate() {
                out.push((format!("hist.w{}", l), layer.w.data()));
                out.push((format!("hist.b{}", l), layer.b.as_slice()));
            }
            for (l, s) in h.slopes.iter().enumerate() {
                out.push((format!("hist.slope{}", l), s.as_slice()));
            }
        }
        for (l, layer) in self.pred.layers.iter().enumerate() {
            out.push((format!("pred.w{}", l), layer.w.data()));
            out.push((format!("pred.b{}", l), layer.b.as_slice()));
        }
        for (l, s) in self.pred.slopes.iter().enumerate() {
            out.push((format!("pred.slope{}", l), s.as_slice()));
        }
        out
    }
}

fn add_row<T: Real>(m: &mut Matrix<T>, idx: usize, v: &[T]) {
    let row = m.row_mut(idx);
    for (r, &x) in row.iter_mut().zip(v) {
        *r = *r + x;
    }
}

/// Backward through Y = W x for a single vector: accumulates d_W += d_y x^T
/// and d_x += W^T d_y.
#[allow(clippy::needless_range_loop)]
fn vec_proj_backward<T: Real>(d_y: &[T], x: &[T], w: &Matrix<T>, d_w: &mut Matrix<T>, d_x: &mut [T]) {
    for r in 0..w.rows() {
        let g = d_y[r];
        if g == T::zero() {
            continue;
        }
        let dwrow = d_w.row_mut(r);
        let wrow = w.row(r);
        for c in 0..w.cols() {
            dwrow[c] = dwrow[c] + g * x[c];
            d_x[c] = d_x[c] + g * wrow[c];
        }
    }
}

/// Accumulates gradients of `weight * bce(label, logit)` for one example
/// into `grads`. Bucketizer boundaries, histogram counts, and multimodal
/// vectors are frozen inputs and receive no gradient.
pub fn backward_example<T: Real>(
    params: &ModelParams<T>,
    prep: &PreparedExample,
    cache: &ForwardCache<T>,
    weight: f64,
    grads: &mut ModelGrads<T>,
) -> Result<()> {
    let cfg = &params.config;
    let d = cfg.embed_dim;
    let d_h = cfg.hidden_dim;
    let ru_dim = cfg.strategy.interest_dim(d_h);

    // d(bce)/d(logit) = sigmoid(logit) - y
    let d_logit = T::from_f64((cache.yhat.to_f64() - prep.label as f64) * weight);
    let d_pred_in = params.pred_mlp.backward(&cache.pred_cache, &[d_logit], &mut grads.pred);

    let d_ru = &d_pred_in[..ru_dim];
    let d_q_head = &d_pred_in[ru_dim..ru_dim + d];
    let d_profile = &d_pred_in[ru_dim + d..];

    // CMM split
    let d_rme: Vec<T> = if cfg.strategy.uses_histogram() {
        let a = T::from_f64(cfg.alpha);
        let b = T::from_f64(1.0 - cfg.alpha);
        let d_rmc: Vec<T> = d_ru.iter().map(|&g| b * g).collect();
        let hist_mlp = params.hist_mlp.as_ref().expect("dmf strategy has histogram MLP");
        let hist_cache = cache.hist_cache.as_ref().expect("forward cached histogram pass");
        let hist_grads = grads.hist.as_mut().expect("grads allocated for histogram MLP");
        // input gradient discarded: the histogram is data
        let _ = hist_mlp.backward(hist_cache, &d_rmc, hist_grads);
        d_ru.iter().map(|&g| a * g).collect()
    } else {
        d_ru.to_vec()
    };

    let l = prep.history_idx.len();
    let mut d_hist = Matrix::zeros(l, d);
    let mut d_qemb = vec![T::zero(); d];

    match cfg.strategy {
        Strategy::Ta | Strategy::Decoupled | Strategy::NonInvasive | Strategy::Dmf => {
            let acache = cache.attn_main.as_ref().ok_or_else(|| {
                DmfError::InvalidConfig("missing attention cache in backward".into())
            })?;
            let (d_qp, d_keys, d_values) = attend_backward(
                acache,
                &prep.valid,
                params.attn.heads,
                params.attn.temperature,
                &d_rme,
            );
            if cfg.strategy.uses_buckets() {
                let (g_ek, g_ev) = grads.bucket.as_mut().expect("bucket grads allocated");
                let enrich_value = cfg.strategy != Strategy::NonInvasive;
                for (j, &b) in prep.buckets.iter().enumerate() {
                    if b == 0 {
                        continue;
                    }
                    add_row(g_ek, b - 1, d_keys.row(j));
                    if enrich_value {
                        add_row(g_ev, b - 1, d_values.row(j));
                    }
                }
            }
            proj_backward(&d_keys, &cache.history, &params.attn.w_k, &mut grads.w_k, &mut d_hist);
            proj_backward(&d_values, &cache.history, &params.attn.w_v, &mut grads.w_v, &mut d_hist);
            vec_proj_backward(&d_qp, &cache.q_emb, &params.attn.w_q, &mut grads.w_q, &mut d_qemb);
        }
        Strategy::Early => {
            let early = params.early.as_ref().expect("early params present");
            let acache = cache.attn_main.as_ref().expect("early attention cache");
            let fused = cache.fused_input.as_ref().expect("early fused input cached");
            let (gq, gk, gv) = grads.early.as_mut().expect("early grads allocated");
            let (d_qp, d_keys, d_values) =
                attend_backward(acache, &prep.valid, early.heads, early.temperature, &d_rme);
            let mut d_fused = Matrix::zeros(l, d + 1);
            proj_backward(&d_keys, fused, &early.w_k, gk, &mut d_fused);
            proj_backward(&d_values, fused, &early.w_v, gv, &mut d_fused);
            // the trailing similarity column is a frozen input
            for j in 0..l {
                let src = &d_fused.row(j)[..d];
                let dst = d_hist.row_mut(j);
                dst.copy_from_slice(src);
            }
            vec_proj_backward(&d_qp, &cache.q_emb, &early.w_q, gq, &mut d_qemb);
        }
        Strategy::Late => {
            let id_cache = cache.attn_main.as_ref().expect("late id cache");
            let sim_cache = cache.attn_sim.as_ref().expect("late sim cache");
            let (gk_proj, gv_proj) = {
                let (k, v) = grads.sim_proj.as_mut().expect("sim projection grads allocated");
                (k, v)
            };
            let (d_qp1, d_keys, d_values) = attend_backward(
                id_cache,
                &prep.valid,
                params.attn.heads,
                params.attn.temperature,
                &d_rme[..d_h],
            );
            proj_backward(&d_keys, &cache.history, &params.attn.w_k, &mut grads.w_k, &mut d_hist);
            proj_backward(&d_values, &cache.history, &params.attn.w_v, &mut grads.w_v, &mut d_hist);
            let (d_qp2, d_k_sim, d_v_sim) = attend_backward(
                sim_cache,
                &prep.valid,
                params.attn.heads,
                params.attn.temperature,
                &d_rme[d_h..],
            );
            // k_sim[j] = c_j * key, v_sim[j] = c_j * value with c_j frozen
            for j in 0..l {
                if !prep.sim.valid[j] {
                    continue;
                }
                let c = T::from_f32(prep.sim.scores[j]);
                let dk = d_k_sim.row(j);
                let dv = d_v_sim.row(j);
                for i in 0..d_h {
                    gk_proj[i] = gk_proj[i] + c * dk[i];
                    gv_proj[i] = gv_proj[i] + c * dv[i];
                }
            }
            let d_qp: Vec<T> = d_qp1.iter().zip(&d_qp2).map(|(&a, &b)| a + b).collect();
            vec_proj_backward(&d_qp, &cache.q_emb, &params.attn.w_q, &mut grads.w_q, &mut d_qemb);
        }
    }

    // scatter into the embedding tables
    for (j, &idx) in prep.history_idx.iter().enumerate() {
        add_row(&mut grads.item_emb, idx, d_hist.row(j));
    }
    for (g, &x) in d_qemb.iter_mut().zip(d_q_head) {
        *g = *g + x;
    }
    add_row(&mut grads.item_emb, prep.target_idx, &d_qemb);
    add_row(&mut grads.profile_emb, prep.user_idx, d_profile);
    Ok(())
}
