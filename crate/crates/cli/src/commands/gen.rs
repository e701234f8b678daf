use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use dmf_core::{gen_synthetic, SyntheticConfig};

#[derive(Args)]
pub struct GenArgs {
    /// Output directory for train.jsonl, test.jsonl, items.mmf.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides (flags win over the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub multimodal_dim: Option<usize>,
    #[arg(long)]
    pub train_examples: Option<usize>,
    #[arg(long)]
    pub test_examples: Option<usize>,
    #[arg(long)]
    pub similarity_weight: Option<f64>,
    #[arg(long)]
    pub affinity_weight: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub history_gamma: Option<f64>,
    /// Emit (positive, random-negative) pairs instead of click-model labels.
    #[arg(long)]
    pub pairing: bool,
}

pub fn run(args: GenArgs) -> Result<()> {
    let mut cfg: SyntheticConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SyntheticConfig::default(),
    };
    macro_rules! over {
        ($($field:ident <- $flag:expr),* $(,)?) => {
            $(if let Some(v) = $flag { cfg.$field = v; })*
        };
    }
    over!(
        seed <- args.seed,
        user_count <- args.users,
        item_count <- args.items,
        multimodal_dim <- args.multimodal_dim,
        train_examples <- args.train_examples,
        test_examples <- args.test_examples,
        similarity_weight <- args.similarity_weight,
        affinity_weight <- args.affinity_weight,
        noise_scale <- args.noise_scale,
        history_gamma <- args.history_gamma,
    );
    if args.pairing {
        cfg.pairing = true;
    }

    let stats = gen_synthetic(&cfg, &args.out)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}
