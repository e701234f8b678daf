//! End-to-end CTR model: embedding tables, the fusion strategies, the
//! prediction head, manual backpropagation with Adam, checkpointing, and
//! the bucket-expressiveness probe.

mod adam;
mod backward;
mod checkpoint;
mod forward;
mod gradcheck;
mod theorem;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use backward::{backward_example, ModelGrads};
pub use forward::{
    bce_loss, bce_loss_logit, cmm_fuse, forward_example, predict_ctr, prepare_example, sigmoid,
    ForwardCache, PreparedExample,
};
pub use gradcheck::{gradient_check, GradCheckReport, GroupReport};
pub use theorem::{theorem1_probe, Theorem1Row};
pub use train::{evaluate_scores, train_epoch, EpochMetrics, TrainConfig};

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, BucketEmbeddingPair, EarlyFusionParams, SimProjection};
use crate::error::{DmfError, Result};
use crate::mlp::Mlp;
use crate::numerics::Matrix;
use crate::real::Real;

/// Side-information fusion strategy for user interest modeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// ID-only multi-head target attention.
    Ta,
    /// Similarity scalar concatenated before the K/V projections.
    Early,
    /// Separate ID and similarity attention streams, concatenated.
    Late,
    /// DTA: cached ID K/V enriched by bucket-embedding lookups.
    Decoupled,
    /// DTA ablation that enriches only the key path.
    NonInvasive,
    /// Decoupled attention fused with the similarity histogram (CMM).
    Dmf,
}

impl std::str::FromStr for Strategy {
    type Err = DmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ta" => Ok(Strategy::Ta),
            "early" => Ok(Strategy::Early),
            "late" => Ok(Strategy::Late),
            "decoupled" | "dta" => Ok(Strategy::Decoupled),
            "noninvasive" => Ok(Strategy::NonInvasive),
            "dmf" => Ok(Strategy::Dmf),
            other => Err(DmfError::InvalidConfig(format!("unknown strategy '{}'", other))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Ta => "ta",
            Strategy::Early => "early",
            Strategy::Late => "late",
            Strategy::Decoupled => "decoupled",
            Strategy::NonInvasive => "noninvasive",
            Strategy::Dmf => "dmf",
        };
        f.write_str(s)
    }
}

impl Strategy {
    pub fn uses_buckets(self) -> bool {
        matches!(self, Strategy::Decoupled | Strategy::NonInvasive | Strategy::Dmf)
    }

    pub fn uses_histogram(self) -> bool {
        matches!(self, Strategy::Dmf)
    }

    /// Width of the interest representation feeding the prediction head.
    pub fn interest_dim(self, hidden_dim: usize) -> usize {
        match self {
            Strategy::Late => 2 * hidden_dim,
            _ => hidden_dim,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// ID embedding width d.
    pub embed_dim: usize,
    /// Attention hidden width d_h.
    pub hidden_dim: usize,
    pub heads: usize,
    pub temperature: f64,
    /// DTA bucket count M.
    pub bucket_count: usize,
    /// Histogram interval count N for the modality-centric path.
    pub histogram_bins: usize,
    /// Scale histogram counts by 1/valid_count (raw counts when false).
    pub normalize_histogram: bool,
    pub histogram_hidden: usize,
    /// Hidden widths of the prediction MLP.
    pub prediction_hidden: Vec<usize>,
    pub profile_dim: usize,
    /// CMM trade-off weight.
    pub alpha: f64,
    pub strategy: Strategy,
    pub max_history: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::amazon()
    }
}

impl ModelConfig {
    /// Public-dataset preset: 32-dim IDs, 4 heads, hidden 32, 80x40x1 head.
    pub fn amazon() -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden_dim: 32,
            heads: 4,
            temperature: 1.0,
            bucket_count: 35,
            histogram_bins: 20,
            normalize_histogram: true,
            histogram_hidden: 32,
            prediction_hidden: vec![80, 40],
            profile_dim: 8,
            alpha: 0.5,
            strategy: Strategy::Dmf,
            max_history: 100,
        }
    }

    /// Industrial-profile preset: hidden 128, 128x64x1 head, batch-1024 era.
    pub fn industry() -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden_dim: 128,
            heads: 4,
            temperature: 1.0,
            bucket_count: 35,
            histogram_bins: 20,
            normalize_histogram: true,
            histogram_hidden: 64,
            prediction_hidden: vec![128, 64],
            profile_dim: 8,
            alpha: 0.5,
            strategy: Strategy::Dmf,
            max_history: 100,
        }
    }

    /// Small configuration for fast desk-scale experiments.
    pub fn desk() -> Self {
        ModelConfig {
            embed_dim: 16,
            hidden_dim: 16,
            heads: 2,
            temperature: 1.0,
            bucket_count: 8,
            histogram_bins: 8,
            normalize_histogram: true,
            histogram_hidden: 16,
            prediction_hidden: vec![32, 16],
            profile_dim: 4,
            alpha: 0.5,
            strategy: Strategy::Dmf,
            max_history: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DmfError::InvalidConfig(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(DmfError::InvalidConfig(format!(
                "hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.temperature <= 0.0 {
            return Err(DmfError::InvalidConfig("temperature must be positive".into()));
        }
        if self.bucket_count < 2 || self.histogram_bins < 1 {
            return Err(DmfError::InvalidConfig("bucket/histogram counts too small".into()));
        }
        Ok(())
    }

    pub fn prediction_input_dim(&self) -> usize {
        self.strategy.interest_dim(self.hidden_dim) + self.embed_dim + self.profile_dim
    }
}

/// Dense embedding table with an out-of-vocabulary row at index 0; lookup
/// never fails.
#[derive(Debug, Clone)]
pub struct EmbeddingTable<T: Real> {
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
    pub rows: Matrix<T>,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn new(ids: Vec<u64>, dim: usize) -> Self {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            index.insert(id, i + 1);
        }
        let rows = Matrix::zeros(ids.len() + 1, dim);
        EmbeddingTable { ids, index, rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Row index for an id; 0 (the OOV row) when unknown.
    pub fn lookup(&self, id: u64) -> usize {
        self.index.get(&id).copied().unwrap_or(0)
    }

    pub fn row(&self, idx: usize) -> &[T] {
        self.rows.row(idx)
    }

    pub fn convert<U: Real>(&self) -> EmbeddingTable<U> {
        EmbeddingTable { ids: self.ids.clone(), index: self.index.clone(), rows: self.rows.convert() }
    }
}

/// All learnable state for one model instance. Which optional groups exist
/// is fixed by the strategy at construction time.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Real> {
    pub config: ModelConfig,
    pub items: EmbeddingTable<T>,
    pub profiles: EmbeddingTable<T>,
    pub attn: AttentionParams<T>,
    pub early: Option<EarlyFusionParams<T>>,
    pub sim_proj: Option<SimProjection<T>>,
    pub bucket_emb: Option<BucketEmbeddingPair<T>>,
    pub hist_mlp: Option<Mlp<T>>,
    pub pred_mlp: Mlp<T>,
}

fn init_matrix<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<T> {
    let scale = (1.0 / cols.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.gen_range(-scale..scale)))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn init_mlp<T: Real>(rng: &mut ChaCha8Rng, widths: &[usize]) -> Mlp<T> {
    let mut mlp = Mlp::zeros(widths);
    for layer in &mut mlp.layers {
        let (r, c) = (layer.w.rows(), layer.w.cols());
        layer.w = init_matrix(rng, r, c);
    }
    for s in &mut mlp.slopes {
        s.iter_mut().for_each(|x| *x = T::from_f64(0.25));
    }
    mlp
}

impl<T: Real> ModelParams<T> {
    /// Random initialization over a fixed vocabulary.
    pub fn init(config: ModelConfig, item_ids: Vec<u64>, user_ids: Vec<u64>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, d_h) = (config.embed_dim, config.hidden_dim);

        let mut items = EmbeddingTable::new(item_ids, d);
        items.rows = init_matrix(&mut rng, items.rows.rows(), d);
        let mut profiles = EmbeddingTable::new(user_ids, config.profile_dim);
        profiles.rows = init_matrix(&mut rng, profiles.rows.rows(), config.profile_dim);

        let attn = AttentionParams::new(
            init_matrix(&mut rng, d_h, d),
            init_matrix(&mut rng, d_h, d),
            init_matrix(&mut rng, d_h, d),
            config.heads,
            T::from_f64(config.temperature),
        )?;

        let early = (config.strategy == Strategy::Early).then(|| EarlyFusionParams {
            w_q: init_matrix(&mut rng, d_h, d),
            w_k: init_matrix(&mut rng, d_h, d + 1),
            w_v: init_matrix(&mut rng, d_h, d + 1),
            heads: config.heads,
            temperature: T::from_f64(config.temperature),
        });
        let sim_proj = (config.strategy == Strategy::Late).then(|| SimProjection {
            key: (0..d_h).map(|_| T::from_f64(rng.gen_range(-0.25..0.25))).collect(),
            value: (0..d_h).map(|_| T::from_f64(rng.gen_range(-0.25..0.25))).collect(),
        });
        let bucket_emb = config.strategy.uses_buckets().then(|| BucketEmbeddingPair {
            e_k: init_matrix(&mut rng, config.bucket_count, d_h),
            e_v: init_matrix(&mut rng, config.bucket_count, d_h),
        });
        let hist_mlp = config.strategy.uses_histogram().then(|| {
            init_mlp(&mut rng, &[config.histogram_bins, config.histogram_hidden, d_h])
        });

        let mut pred_widths = vec![config.prediction_input_dim()];
        pred_widths.extend(&config.prediction_hidden);
        pred_widths.push(1);
        let pred_mlp = init_mlp(&mut rng, &pred_widths);

        Ok(ModelParams { config, items, profiles, attn, early, sim_proj, bucket_emb, hist_mlp, pred_mlp })
    }

    pub fn convert<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            items: self.items.convert(),
            profiles: self.profiles.convert(),
            attn: AttentionParams {
                w_q: self.attn.w_q.convert(),
                w_k: self.attn.w_k.convert(),
                w_v: self.attn.w_v.convert(),
                heads: self.attn.heads,
                temperature: U::from_f64(self.attn.temperature.to_f64()),
            },
            early: self.early.as_ref().map(|e| EarlyFusionParams {
                w_q: e.w_q.convert(),
                w_k: e.w_k.convert(),
                w_v: e.w_v.convert(),
                heads: e.heads,
                temperature: U::from_f64(e.temperature.to_f64()),
            }),
            sim_proj: self.sim_proj.as_ref().map(|s| SimProjection {
                key: s.key.iter().map(|x| U::from_f64(x.to_f64())).collect(),
                value: s.value.iter().map(|x| U::from_f64(x.to_f64())).collect(),
            }),
            bucket_emb: self.bucket_emb.as_ref().map(|b| BucketEmbeddingPair {
                e_k: b.e_k.convert(),
                e_v: b.e_v.convert(),
            }),
            hist_mlp: self.hist_mlp.as_ref().map(|m| m.convert()),
            pred_mlp: self.pred_mlp.convert(),
        }
    }

    /// Visits every learnable tensor in a fixed order; the same order is
    /// used by the optimizer state, gradients, and checkpoints.
    pub fn visit_tensors_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        f("item_emb", self.items.rows.data_mut());
        f("profile_emb", self.profiles.rows.data_mut());
        f("attn.w_q", self.attn.w_q.data_mut());
        f("attn.w_k", self.attn.w_k.data_mut());
        f("attn.w_v", self.attn.w_v.data_mut());
        if let Some(e) = &mut self.early {
            f("early.w_q", e.w_q.data_mut());
            f("early.w_k", e.w_k.data_mut());
            f("early.w_v", e.w_v.data_mut());
        }
        if let Some(s) = &mut self.sim_proj {
            f("sim_proj.key", &mut s.key);
            f("sim_proj.value", &mut s.value);
        }
        if let Some(b) = &mut self.bucket_emb {
            f("bucket.e_k", b.e_k.data_mut());
            f("bucket.e_v", b.e_v.data_mut());
        }
        if let Some(h) = &mut self.hist_mlp {
            for (l, layer) in h.layers.iter_mut().enumerate() {
                f(&format!("hist.w{}", l), layer.w.data_mut());
                f(&format!("hist.b{}", l), &mut layer.b);
            }
            for (l, s) in h.slopes.iter_mut().enumerate() {
                f(&format!("hist.slope{}", l), s);
            }
        }
        for (l, layer) in self.pred_mlp.layers.iter_mut().enumerate() {
            f(&format!("pred.w{}", l), layer.w.data_mut());
            f(&format!("pred.b{}", l), &mut layer.b);
        }
        for (l, s) in self.pred_mlp.slopes.iter_mut().enumerate() {
            f(&format!("pred.slope{}", l), s);
        }
    }

    /// Tensor shapes in visitation order, for checkpoints.
    pub fn tensor_shapes(&mut self) -> Vec<(String, Vec<usize>)> {
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        // shapes that are matrices get their true 2-D shape
        let dims: Vec<(String, Vec<usize>)> = {
            let mut v = Vec::new();
            v.push(("item_emb".into(), vec![self.items.rows.rows(), self.items.rows.cols()]));
            v.push(("profile_emb".into(), vec![self.profiles.rows.rows(), self.profiles.rows.cols()]));
            for (n, m) in [("attn.w_q", &self.attn.w_q), ("attn.w_k", &self.attn.w_k), ("attn.w_v", &self.attn.w_v)] {
                v.push((n.into(), vec![m.rows(), m.cols()]));
            }
            if let Some(e) = &self.early {
                for (n, m) in [("early.w_q", &e.w_q), ("early.w_k", &e.w_k), ("early.w_v", &e.w_v)] {
                    v.push((n.into(), vec![m.rows(), m.cols()]));
                }
            }
            if let Some(s) = &self.sim_proj {
                v.push(("sim_proj.key".into(), vec![1, s.key.len()]));
                v.push(("sim_proj.value".into(), vec![1, s.value.len()]));
            }
            if let Some(b) = &self.bucket_emb {
                v.push(("bucket.e_k".into(), vec![b.e_k.rows(), b.e_k.cols()]));
                v.push(("bucket.e_v".into(), vec![b.e_v.rows(), b.e_v.cols()]));
            }
            if let Some(h) = &self.hist_mlp {
                for (l, layer) in h.layers.iter().enumerate() {
                    v.push((format!("hist.w{}", l), vec![layer.w.rows(), layer.w.cols()]));
                    v.push((format!("hist.b{}", l), vec![1, layer.b.len()]));
                }
                for (l, s) in h.slopes.iter().enumerate() {
                    v.push((format!("hist.slope{}", l), vec![1, s.len()]));
                }
            }
            for (l, layer) in self.pred_mlp.layers.iter().enumerate() {
                v.push((format!("pred.w{}", l), vec![layer.w.rows(), layer.w.cols()]));
                v.push((format!("pred.b{}", l), vec![1, layer.b.len()]));
            }
            for (l, s) in self.pred_mlp.slopes.iter().enumerate() {
                v.push((format!("pred.slope{}", l), vec![1, s.len()]));
            }
            v
        };
        shapes.extend(dims);
        shapes
    }
}

pub use checkpoint::{load_checkpoint, save_checkpoint};
