mod commands;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dmf", version, about = "Target-aware attention engine: data, training, analysis, serving benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic interaction dataset with a planted signal.
    Gen(commands::gen::GenArgs),
    /// Train a model and report ranking metrics.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(commands::eval::EvalArgs),
    /// Run the self-verification suite (gradients, reuse, bucketization).
    Verify(commands::verify::VerifyArgs),
    /// FLOPs accounting and sustained-QPS stress runs.
    Bench(commands::bench::BenchArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Gen(args) => commands::gen::run(args),
        Cmd::Train(args) => commands::train::run(args),
        Cmd::Eval(args) => commands::eval::run(args),
        Cmd::Verify(args) => commands::verify::run(args),
        Cmd::Bench(args) => commands::bench::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {:#}", e);
        std::process::exit(1);
    }
}
