use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use dmf_core::{
    auc, evaluate_scores, gauc, save_checkpoint, train_epoch, AdamConfig, AdamState,
    ModelConfig, ModelParams, Strategy, TrainConfig,
};

use crate::commands::{fit_bucketizer, load_dataset, prepare_all};

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (train.jsonl, test.jsonl, items.mmf).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bucketizer JSON output path (defaults to <data>/bucketizer.json).
    #[arg(long)]
    pub bucketizer_out: Option<PathBuf>,
    /// TOML file with model settings; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named baseline configuration: amazon, industry, or desk.
    #[arg(long)]
    pub preset: Option<String>,
    /// ta | early | late | decoupled | noninvasive | dmf
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub buckets: Option<usize>,
    #[arg(long)]
    pub histogram_bins: Option<usize>,
    #[arg(long)]
    pub max_history: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap on similarity scores sampled for bucketizer fitting.
    #[arg(long, default_value_t = 200_000)]
    pub fit_scores: usize,
}

#[derive(Serialize)]
struct TrainReport {
    strategy: String,
    alpha: f64,
    epochs: usize,
    final_train_loss: f64,
    test_auc: Option<f64>,
    test_gauc: Option<f64>,
    checkpoint: Option<String>,
}

pub fn build_config(args: &TrainArgs) -> Result<ModelConfig> {
    let mut cfg = match (&args.config, args.preset.as_deref()) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some("amazon")) | (None, None) => ModelConfig::amazon(),
        (None, Some("industry")) => ModelConfig::industry(),
        (None, Some("desk")) => ModelConfig::desk(),
        (None, Some(other)) => bail!("unknown preset '{}'", other),
    };
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse::<Strategy>()?;
    }
    macro_rules! over {
        ($($field:ident <- $flag:expr),* $(,)?) => {
            $(if let Some(v) = $flag { cfg.$field = v; })*
        };
    }
    over!(
        alpha <- args.alpha,
        embed_dim <- args.embed_dim,
        hidden_dim <- args.hidden_dim,
        heads <- args.heads,
        temperature <- args.temperature,
        bucket_count <- args.buckets,
        histogram_bins <- args.histogram_bins,
        max_history <- args.max_history,
    );
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: TrainArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let data = load_dataset(&args.data, cfg.max_history)?;
    if data.train.is_empty() {
        bail!("no training examples in {}", args.data.display());
    }

    let bz = fit_bucketizer(&data, cfg.bucket_count, args.fit_scores)?;
    let bz_path = args
        .bucketizer_out
        .clone()
        .unwrap_or_else(|| args.data.join("bucketizer.json"));
    std::fs::write(&bz_path, bz.to_json()?)?;

    let mut params = ModelParams::<f32>::init(
        cfg.clone(),
        data.item_ids.clone(),
        data.user_ids.clone(),
        args.seed,
    )?;
    let train_prep = prepare_all(&data.train, &params, &data.mm, &bz)?;
    let test_prep = prepare_all(&data.test, &params, &data.mm, &bz)?;

    let mut opt = AdamState::new(&mut params, AdamConfig { lr: args.lr, ..Default::default() });
    let tc = TrainConfig { batch_size: args.batch_size, epochs: args.epochs, seed: args.seed };
    let mut last_loss = f64::NAN;
    for epoch in 0..args.epochs {
        let m = train_epoch(&mut params, &mut opt, &train_prep, &tc, epoch)?;
        last_loss = m.mean_loss;
        eprintln!("epoch {}: mean loss {:.5} over {} batches", epoch + 1, m.mean_loss, m.batches);
    }

    let (test_auc, test_gauc) = if test_prep.is_empty() {
        (None, None)
    } else {
        let (labels, scores) = evaluate_scores(&params, &test_prep)?;
        let user_ids: Vec<u64> = data.test.iter().map(|e| e.user_id).collect();
        let a = auc(&labels, &scores)?;
        let g = gauc(&user_ids, &labels, &scores).map(|r| r.gauc).ok();
        (Some(a), g)
    };

    if let Some(out) = &args.out {
        save_checkpoint(&params, out)?;
    }
    let report = TrainReport {
        strategy: cfg.strategy.to_string(),
        alpha: cfg.alpha,
        epochs: args.epochs,
        final_train_loss: last_loss,
        test_auc,
        test_gauc,
        checkpoint: args.out.as_ref().map(|p| p.display().to_string()),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
