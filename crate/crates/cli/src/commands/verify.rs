use anyhow::{bail, Result};
use clap::Args;

use dmf_core::{
    gradient_check, prepare_user, reuse_equivalence_check, theorem1_probe, ModelConfig,
    ModelParams, Strategy, SyntheticConfig,
};

use crate::commands::{fit_bucketizer, load_dataset, prepare_all};

#[derive(Args)]
pub struct VerifyArgs {
    /// Corrupt the cached K/V before the reuse check to prove the check
    /// detects divergence (the command then exits nonzero).
    #[arg(long)]
    pub inject_fault: bool,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    /// Relative-error tolerance for the gradient check.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn tiny_world_config() -> SyntheticConfig {
    SyntheticConfig {
        user_count: 12,
        item_count: 40,
        multimodal_dim: 8,
        history_len_min: 4,
        history_len_max: 8,
        train_examples: 60,
        test_examples: 0,
        seed: 9,
        ..Default::default()
    }
}

fn tiny_model_config(strategy: Strategy) -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        hidden_dim: 4,
        heads: 2,
        temperature: 1.0,
        bucket_count: 3,
        histogram_bins: 4,
        normalize_histogram: true,
        histogram_hidden: 4,
        prediction_hidden: vec![8, 4],
        profile_dim: 3,
        alpha: 0.5,
        strategy,
        max_history: 3,
    }
}

pub fn run(args: VerifyArgs) -> Result<()> {
    let dir = std::env::temp_dir().join(format!("dmf-verify-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dmf_core::gen_synthetic(&tiny_world_config(), &dir)?;
    let data = load_dataset(&dir, 3)?;
    let bz = fit_bucketizer(&data, 3, 10_000)?;
    let mut failures = 0usize;

    // manual backward vs central finite differences on an f64 shadow model
    for strategy in [
        Strategy::Ta,
        Strategy::Early,
        Strategy::Late,
        Strategy::Decoupled,
        Strategy::NonInvasive,
        Strategy::Dmf,
    ] {
        let params = ModelParams::<f64>::init(
            tiny_model_config(strategy),
            data.item_ids.clone(),
            data.user_ids.clone(),
            11,
        )?;
        let params32 = params.convert::<f32>();
        let prep: Vec<_> = prepare_all(&data.train[..3], &params32, &data.mm, &bz)?
            .into_iter()
            .collect();
        let report = gradient_check(&params, &prep, args.step)?;
        let ok = report.passes(args.tolerance);
        if !ok {
            failures += 1;
        }
        println!(
            "gradcheck[{:<11}] {} (max rel err {:.3e})",
            strategy.to_string(),
            if ok { "PASS" } else { "FAIL" },
            report.max_rel_err
        );
        for g in report.groups.iter().filter(|g| g.max_rel_err >= args.tolerance) {
            println!(
                "  {}: rel err {:.3e} (analytic {:.6e}, numeric {:.6e})",
                g.name, g.max_rel_err, g.worst_analytic, g.worst_numeric
            );
        }
    }

    // cached vs recomputed scoring must agree bit-for-bit
    let params = ModelParams::<f32>::init(
        tiny_model_config(Strategy::Dmf),
        data.item_ids.clone(),
        data.user_ids.clone(),
        13,
    )?;
    let ex = &data.train[0];
    let ctx = prepare_user(&params, &data.mm, ex.user_id, &ex.history)?;
    let candidates: Vec<u64> = data.item_ids.iter().copied().take(100).collect();
    let check =
        reuse_equivalence_check(&params, &data.mm, &bz, &ctx, &candidates, args.inject_fault)?;
    let ok = check.passed();
    if !ok {
        failures += 1;
    }
    println!(
        "reuse-equivalence {} ({}/{} candidates bit-identical{})",
        if ok { "PASS" } else { "FAIL" },
        check.candidates - check.mismatches,
        check.candidates,
        if args.inject_fault { ", fault injected" } else { "" }
    );

    // finer bucketization must strictly shrink the worst-case substitution
    // error, and every measured error must respect the half-width bound
    let w = [0.7, -0.3, 0.5, 0.2];
    let rows = theorem1_probe(&[8, 16, 32, 64], &w, 10_000, 17)?;
    let monotone = rows.windows(2).all(|p| p[1].max_error < p[0].max_error);
    let bounded = rows.iter().all(|r| r.max_error <= r.bound + 1e-12);
    let ok = monotone && bounded;
    if !ok {
        failures += 1;
    }
    for r in &rows {
        println!(
            "buckets {:>3}: max substitution error {:.5} (bound {:.5})",
            r.buckets, r.max_error, r.bound
        );
    }
    println!("bucket-expressiveness {}", if ok { "PASS" } else { "FAIL" });

    let _ = std::fs::remove_dir_all(&dir);
    if failures > 0 {
        bail!("{} verification check(s) failed", failures);
    }
    println!("all checks passed");
    Ok(())
}
