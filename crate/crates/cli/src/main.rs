//! `multiaug`: synthetic data, multi-path consistency training, evaluation and
//! feature-spectrum analysis from the command line.

mod commands;
mod config;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Marks an error as a usage error (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

impl Usage {
    /// Re-tags any error as a usage error, keeping its message chain.
    pub fn wrap(e: anyhow::Error) -> anyhow::Error {
        let msg = format!("{e:#}");
        anyhow::Error::new(Usage(msg))
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The validator warned or a metric could not be produced.
    Failed,
}

#[derive(Parser)]
#[command(name = "multiaug", version, about = "Multi-path consistency training for keypoint estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic stick-figure dataset (PNGs plus COCO-style annotations).
    SynthGen(SynthGenArgs),
    /// Train from a run config; writes losses, checkpoints and the resolved config.
    Train(TrainArgs),
    /// Train each candidate augmentation as a single consistency path and rank them.
    RankAugs(RankArgs),
    /// Evaluate checkpoints on an annotated dataset and dump pooled features.
    Eval(EvalArgs),
    /// Singular-value spectrum and its entropy for a feature dump.
    Svd(SvdArgs),
    /// Check pipelines against the combination principles (exit 1 on any warning).
    ValidateCombo(ValidateArgs),
}

#[derive(Args)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file overriding synthetic generator fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `single` or `dual`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated consistency paths; each a preset or a `+`-joined tag list.
    #[arg(long)]
    pub paths: Option<String>,
    /// `ml` (multi-loss), `cm` (confidence mask) or `hf` (heatmap fusion).
    #[arg(long)]
    pub unsup_mode: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the newest checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args)]
pub struct RankArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated candidate pipelines.
    #[arg(long, default_value = "JC,JO,CO,CM,MU,A60")]
    pub candidates: String,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// A checkpoint directory (every network in it) or a single `.tensors` network; repeatable.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// COCO-style annotation file.
    #[arg(long)]
    pub dataset: PathBuf,
    /// `oks`, `pck` or `pckh`.
    #[arg(long, default_value = "oks")]
    pub metric: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Network input as `HEIGHTxWIDTH`.
    #[arg(long, default_value = "64x48")]
    pub input: String,
}

#[derive(Args)]
pub struct SvdArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = multiaug_core::analysis::DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Subtract the column means first.
    #[arg(long)]
    pub centered: bool,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ValidateArgs {
    /// Pipelines to check together. Each value is a preset or a comma-separated tag list;
    /// `+` separates several pipelines within one value.
    #[arg(long, num_args = 1.., required = true)]
    pub pipelines: Vec<String>,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("POSEAUG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Usage(format!("POSEAUG_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Usage>() || matches!(c.downcast_ref::<multiaug_core::Error>(), Some(multiaug_core::Error::InvalidParameter(_)))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::SynthGen(a) => commands::synth_gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::RankAugs(a) => commands::rank_augs(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Svd(a) => commands::svd(&a),
        Command::ValidateCombo(a) => commands::validate_combo(&a),
    });
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}
