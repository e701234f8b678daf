use std::time::Duration;

use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;

use dmf_core::{
    flops_report, qps_bench, FlopsReport, ModelConfig, ModelParams, MultimodalTable,
    QpsConfig, QpsReport, Strategy, SyntheticConfig,
};

use crate::commands::{fit_bucketizer, load_dataset};

#[derive(Args)]
pub struct BenchArgs {
    /// Named scenario; `paper-stress` is B=1200 candidates over L=400
    /// history at width 128.
    #[arg(long)]
    pub preset: Option<String>,
    /// Only print the FLOPs table, skip wall-clock runs.
    #[arg(long)]
    pub flops_only: bool,
    /// Candidates per request (B).
    #[arg(long, default_value_t = 200)]
    pub candidates: usize,
    /// History length (L).
    #[arg(long, default_value_t = 100)]
    pub history: usize,
    /// Model width d for both the embedding and attention projections.
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub duration_secs: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Comma-separated strategies to time.
    #[arg(long, default_value = "early,decoupled")]
    pub strategies: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Serialize)]
struct BenchReport {
    flops: Vec<FlopsReport>,
    qps: Vec<QpsReport>,
    /// decoupled-over-early throughput, when both were timed.
    qps_ratio: Option<f64>,
}

pub fn run(mut args: BenchArgs) -> Result<()> {
    if let Some(preset) = args.preset.as_deref() {
        match preset {
            "paper-stress" => {
                args.candidates = 1200;
                args.history = 400;
                args.width = 128;
            }
            other => bail!("unknown preset '{}'", other),
        }
    }
    let strategies: Vec<Strategy> = args
        .strategies
        .split(',')
        .map(|s| s.trim().parse::<Strategy>().map_err(Into::into))
        .collect::<Result<_>>()?;

    let (b, l, d) = (args.candidates as u64, args.history as u64, args.width as u64);
    let flops: Vec<FlopsReport> = strategies.iter().map(|&s| flops_report(s, b, l, d)).collect();
    for f in &flops {
        println!(
            "flops[{:<11}] with reuse {:>16} ({:.3} GFLOPs)   without {:>16} ({:.3} GFLOPs)",
            f.strategy, f.with_reuse, f.gflops_with_reuse, f.without_reuse, f.gflops_without_reuse
        );
    }

    let mut qps: Vec<QpsReport> = Vec::new();
    if !args.flops_only {
        // synthetic world sized to the scenario; weights are random, only
        // arithmetic cost matters here
        let dir = std::env::temp_dir().join(format!("dmf-bench-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        dmf_core::gen_synthetic(
            &SyntheticConfig {
                user_count: 50,
                item_count: 2000,
                train_examples: 50,
                test_examples: 0,
                history_len_min: 5,
                history_len_max: 10,
                seed: args.seed,
                ..Default::default()
            },
            &dir,
        )?;
        let data = load_dataset(&dir, usize::MAX)?;
        let bz = fit_bucketizer(&data, 35, 50_000)?;
        let mm: &MultimodalTable = &data.mm;

        for &strategy in &strategies {
            let cfg = ModelConfig {
                embed_dim: args.width,
                hidden_dim: args.width,
                heads: 4,
                bucket_count: 35,
                max_history: args.history,
                strategy,
                ..ModelConfig::industry()
            };
            let params = ModelParams::<f32>::init(
                cfg,
                data.item_ids.clone(),
                data.user_ids.clone(),
                args.seed,
            )?;
            let report = qps_bench(
                &params,
                mm,
                &bz,
                &QpsConfig {
                    candidates: args.candidates,
                    history_len: args.history,
                    duration: Duration::from_secs(args.duration_secs),
                    threads: args.threads,
                    reuse: strategy != Strategy::Early,
                    seed: args.seed,
                },
            )?;
            println!(
                "qps[{:<11}] {:>8.2} req/s   p50 {:>8.2} ms   p99 {:>8.2} ms   ({} requests)",
                report.strategy, report.qps, report.p50_latency_ms, report.p99_latency_ms, report.requests
            );
            qps.push(report);
        }
        let _ = std::fs::remove_dir_all(&dir);
    }

    let early = qps.iter().find(|r| r.strategy == "early").map(|r| r.qps);
    let dec = qps.iter().find(|r| r.strategy == "decoupled").map(|r| r.qps);
    let qps_ratio = match (early, dec) {
        (Some(e), Some(d)) if e > 0.0 => Some(d / e),
        _ => None,
    };
    if let Some(r) = qps_ratio {
        println!("qps ratio decoupled/early: {:.2}x", r);
    }
    println!("{}", serde_json::to_string_pretty(&BenchReport { flops, qps, qps_ratio })?);
    Ok(())
}
