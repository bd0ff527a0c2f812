//! `softcam` command-line driver: synthetic data generation, training,
//! explanation export, evaluation and λ sweeps.
//!
//! Data goes to files; stdout carries one JSON summary line per command and
//! diagnostics go to stderr. Exit codes: 0 success, 1 internal error,
//! 2 configuration or input error, 3 training failure, 4 empty evaluation.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "softcam", version, about = "Inherently interpretable CNN classifiers with class-evidence heads")]
struct Cli {
    /// Worker threads (defaults to machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Global seed; overrides seeds from config files.
    #[arg(long, global = true, env = "SOFTCAM_SEED")]
    seed: Option<u64>,
    /// `key=value` override of the JSON config (dotted keys for nesting).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replace the output directory if it already exists.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic lesion dataset.
    GenData(GenDataArgs),
    /// Train a black-box or class-evidence model.
    Train(TrainArgs),
    /// Export saliency maps for a dataset split.
    Explain(ExplainArgs),
    /// Compute localisation and deletion metrics.
    Evaluate(EvaluateArgs),
    /// Train one model per (λ1, λ2) grid point and select a regulariser strength.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Dataset config JSON; defaults to the binary task.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Run config JSON with `train`, `preset` and `blocks` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "softcam")]
    pub head: commands::HeadArg,
    #[arg(long, value_enum)]
    pub preset: Option<commands::PresetArg>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// `all` or a comma-separated list of method names.
    #[arg(long, default_value = "all")]
    pub methods: String,
    /// Explain this class instead of the predicted one.
    #[arg(long, conflicts_with = "all_classes")]
    pub class: Option<usize>,
    /// Explain every class.
    #[arg(long)]
    pub all_classes: bool,
    /// Only the first N samples of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value = "all")]
    pub methods: String,
    /// Patches counted by top-k precision and removed by deletion.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Patch side in pixels.
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    /// Value written into occluded patches.
    #[arg(long, default_value_t = 0.0)]
    pub fill: f32,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated `λ1:λ2` pairs.
    #[arg(long, default_value = "0:0,1e-5:0,1e-4:0,1e-3:0")]
    pub grid: String,
    #[arg(long, value_enum)]
    pub preset: Option<commands::PresetArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::error!("cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let global = commands::Global {
        seed: cli.seed,
        overrides: cli.set,
        force: cli.force,
    };
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(&global, a),
        Command::Train(a) => commands::train(&global, a),
        Command::Explain(a) => commands::explain(&global, a),
        Command::Evaluate(a) => commands::evaluate(&global, a),
        Command::Sweep(a) => commands::sweep(&global, a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            log::error!("{:#}", failure.error);
            if let Some(summary) = failure.summary {
                println!("{summary}");
            }
            ExitCode::from(failure.code)
        }
    }
}
