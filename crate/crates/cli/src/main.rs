//! `birdsong`: preprocess a corpus, train, predict and evaluate.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, TrainSplit};

#[derive(Debug, Parser)]
#[command(name = "birdsong", version, about = "Multi-modal bird-song identification")]
struct Cli {
    /// TOML run configuration; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base random seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment every recording and write its sound/noise masks.
    Preprocess(PreprocessArgs),
    /// Train a network, writing checkpoints and a log.
    Train(TrainArgs),
    /// Score recordings with one checkpoint or an ensemble.
    Predict(PredictArgs),
    /// Compute mean average precision of a prediction file.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Cache directory receiving the masks.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Cache directory written by `preprocess`.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Directory for checkpoints and the training log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Epochs to run in this invocation.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// `full` or the training fraction, e.g. `0.9`.
    #[arg(long)]
    pub train_split: Option<TrainSplit>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Checkpoint to score with; repeat to ensemble.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Prediction CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub judgments: PathBuf,
    /// `main_only` or `with_background`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Per-recording average precision CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A usage or configuration problem; exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.is::<Usage>() || matches!(e.downcast_ref::<birdsong::Error>(), Some(birdsong::Error::Config(_)))
    });
    if usage {
        1
    } else {
        2
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Usage("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Usage(e.to_string()))?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.training.seed = cfg.seed;
    match cli.command {
        Command::Preprocess(a) => commands::preprocess(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Predict(a) => commands::predict(&cfg, a),
        Command::Evaluate(a) => commands::evaluate(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
