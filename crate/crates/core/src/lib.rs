//! Target-aware attention engine for CTR prediction with frozen multimodal
//! side information.
//!
//! The central idea: keep the attention keys and values target-agnostic so
//! they can be computed once per user and reused across every candidate,
//! then re-introduce target awareness through bucketized similarity
//! embeddings added on top (decoupled attention), optionally fused with a
//! histogram summary of the whole similarity profile.

pub mod attention;
pub mod bucketing;
pub mod data;
pub mod error;
pub mod features;
pub mod flops;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod numerics;
pub mod qps;
pub mod real;
pub mod serving;

pub use attention::{
    attend, attend_backward, dta_forward, early_fusion_forward, enrich_kv, enrich_kv_indexed,
    late_fusion_forward, noninvasive_forward, precompute_id_kv, ta_forward, ta_forward_with_kv,
    AttentionParams, AttnCache, BucketEmbeddingPair, EarlyFusionParams, IdKv, SimProjection,
};
pub use bucketing::{uniform_histogram, Bucketizer};
pub use data::{gen_synthetic, load_interactions, GenStats, LoadedDataset, SyntheticConfig, TrainExample};
pub use error::{DmfError, Result};
pub use features::{
    cosine_similarity, histogram_input, histogram_representation, similarity_vector,
    FeatureStats, MultimodalTable, SimilarityVector,
};
pub use flops::{flops_kv, flops_report, FlopsReport, FlopsScenario};
pub use metrics::{auc, auc_pair_counting, gauc, GaucResult};
pub use mlp::{Linear, Mlp, MlpCache, MlpGrads};
pub use model::{
    backward_example, bce_loss, bce_loss_logit, cmm_fuse, evaluate_scores, forward_example,
    gradient_check, load_checkpoint, predict_ctr, prepare_example, save_checkpoint, sigmoid,
    theorem1_probe, train_epoch, AdamConfig, AdamState, EmbeddingTable, EpochMetrics,
    GradCheckReport, GroupReport, ModelConfig, ModelGrads, ModelParams, PreparedExample,
    Strategy, Theorem1Row, TrainConfig,
};
pub use numerics::{dot, matmul, matvec, prelu, softmax_masked, DenseMatrix, Matrix};
pub use qps::{effective_threads, qps_bench, QpsConfig, QpsReport};
pub use real::Real;
pub use serving::{prepare_user, reuse_equivalence_check, score_candidates, ReuseCheck, UserContext};
