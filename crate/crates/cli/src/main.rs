//! `empo`: train, evaluate, adapt, sweep and export.

mod commands;
mod export;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "empo", version, about = "Memory-augmented group policy optimisation on toy text environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and stream metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out variants.
    Eval(EvalArgs),
    /// Run frozen-weight adaptation trials with accumulating memory.
    Adapt(AdaptArgs),
    /// Sweep one hyperparameter over a list of values and seeds.
    Ablate(AblateArgs),
    /// Convert a metrics stream to long-format CSV.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    /// Memory tips, hybrid updates and intrinsic rewards.
    Empo2,
    /// Plain group-relative updates: forces p = 0 and lambda-int = 0.
    Grpo,
}

/// Flags shared by `train` and `ablate`. Flags override the config file.
#[derive(Args, Clone, Debug)]
pub struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "empo2")]
    pub algo: Algo,
    #[arg(long)]
    pub env: Option<String>,
    /// Probability of a memory-augmented rollout iteration.
    #[arg(long)]
    pub p: Option<f64>,
    /// Probability of an off-policy update on memory iterations.
    #[arg(long)]
    pub q: Option<f64>,
    /// Low-probability mask threshold.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Intrinsic reward weight.
    #[arg(long = "lambda-int")]
    pub lambda_int: Option<f64>,
    /// KL coefficient.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long = "checkpoint-every")]
    pub checkpoint_every: Option<u64>,
    /// Any other config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Output directory.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    /// Continue from a checkpoint directory; its config is used unchanged.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Environment family; defaults to the checkpoint's.
    #[arg(long)]
    pub env: Option<String>,
    /// Variant range `a..b`; defaults to the checkpoint's test variants.
    #[arg(long)]
    pub variants: Option<String>,
    /// Retrieve tips from the checkpoint's memory buffer for this family.
    #[arg(long = "use-memory")]
    pub use_memory: bool,
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    /// Sample actions with this seed instead of acting greedily.
    #[arg(long = "sampled-seed")]
    pub sampled_seed: Option<u64>,
    /// Also write every episode to trajectories.jsonl.
    #[arg(long = "dump-trajectories")]
    pub dump_trajectories: bool,
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "paint-mix")]
    pub env: String,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Variant range `a..b`; defaults to the checkpoint's test variants.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long, default_value = "runs/adapt")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Swept key: p, q or lambda-int.
    #[arg(long)]
    pub sweep: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "runs/ablate")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Metrics JSON-lines file.
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long, default_value = "runs/export")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Export(a) => export::export(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
