use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use dmf_core::{auc, evaluate_scores, gauc, load_checkpoint, Bucketizer};

use crate::commands::{load_dataset, prepare_all};

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset directory; scores test.jsonl (train.jsonl when absent).
    #[arg(long)]
    pub data: PathBuf,
    /// DMF1 checkpoint to evaluate.
    #[arg(long)]
    pub model: PathBuf,
    /// Bucketizer JSON (defaults to <data>/bucketizer.json).
    #[arg(long)]
    pub bucketizer: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalReport {
    strategy: String,
    examples: usize,
    auc: f64,
    gauc: Option<f64>,
    gauc_users_skipped: Option<usize>,
}

pub fn run(args: EvalArgs) -> Result<()> {
    let params = load_checkpoint(&args.model)
        .with_context(|| format!("loading checkpoint {}", args.model.display()))?;
    let bz_path = args
        .bucketizer
        .clone()
        .unwrap_or_else(|| args.data.join("bucketizer.json"));
    let bz = Bucketizer::from_json(&std::fs::read_to_string(&bz_path)?)
        .with_context(|| format!("loading bucketizer {}", bz_path.display()))?;

    let data = load_dataset(&args.data, params.config.max_history)?;
    let (examples, raw) = if data.test.is_empty() {
        (prepare_all(&data.train, &params, &data.mm, &bz)?, &data.train)
    } else {
        (prepare_all(&data.test, &params, &data.mm, &bz)?, &data.test)
    };
    if examples.is_empty() {
        bail!("nothing to evaluate in {}", args.data.display());
    }

    let (labels, scores) = evaluate_scores(&params, &examples)?;
    let user_ids: Vec<u64> = raw.iter().map(|e| e.user_id).collect();
    let g = gauc(&user_ids, &labels, &scores).ok();
    let report = EvalReport {
        strategy: params.config.strategy.to_string(),
        examples: examples.len(),
        auc: auc(&labels, &scores)?,
        gauc: g.as_ref().map(|r| r.gauc),
        gauc_users_skipped: g.as_ref().map(|r| r.users_skipped),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
