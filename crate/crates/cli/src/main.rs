//! `pqdaf`: toy data, generator training, generation, semantic filtering,
//! mixing, classifier training, evaluation and ratio sweeps.
//!
//! Exit codes: 0 success, 1 file-system failure, 2 invalid input or
//! configuration, 3 external-service failure, 4 data shortfall. Errors are
//! reported as one line on stderr: `pqdaf: error[<kind>]: <message>`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pqdaf_core::{Error, ErrorKind};

use config::{Overrides, PipelineConfig, ScorerKind};

#[derive(Parser)]
#[command(name = "pqdaf", version, about = "Pose-guided augmentation with semantic filtering for few-shot classification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long = "k-shot", global = true)]
    k_shot: Option<usize>,
    /// Synthetic samples per real sample, per class.
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// Keep threshold on the scorer's reply.
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, value_enum, global = true)]
    scorer: Option<ScorerKind>,
    /// Overrides PQDAF_SCORER_ENDPOINT.
    #[arg(long = "scorer-endpoint", global = true)]
    scorer_endpoint: Option<String>,
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,
    /// Deterministic sampling (the default); `--deterministic=false`
    /// injects seeded noise at every step.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
}

#[derive(Args, Default)]
struct Inputs {
    /// Real-image manifest.
    #[arg(long)]
    real: Option<PathBuf>,
    /// Synthetic pool manifest.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Generator checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training manifest.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Evaluation manifest.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Classifier file.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a toy training set and a separate test set.
    ToyData,
    /// Train the pose-conditioned generator on toy pairs.
    TrainGenerator,
    /// Generate a synthetic pool from real sources (--checkpoint, --real).
    Generate(#[command(flatten)] Inputs),
    /// Score a pool and keep samples at or above tau (--pool).
    Filter(#[command(flatten)] Inputs),
    /// Draw a k-shot subset and add filtered samples at the ratio (--real, --pool).
    Mix(#[command(flatten)] Inputs),
    /// Train a classifier (--train, optionally --eval).
    Train(#[command(flatten)] Inputs),
    /// Evaluate a saved classifier (--model, --eval).
    Eval(#[command(flatten)] Inputs),
    /// Accuracy against mixing ratio over seeds (--real, --pool, optionally --eval).
    Sweep(#[command(flatten)] Inputs),
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Io => 1,
        ErrorKind::Validation => 2,
        ErrorKind::ExternalService => 3,
        ErrorKind::Shortfall => 4,
    }
}

fn kind_name(e: &Error) -> &'static str {
    match e.kind() {
        ErrorKind::Io => "io",
        ErrorKind::Validation => "validation",
        ErrorKind::ExternalService => "external",
        ErrorKind::Shortfall => "shortfall",
    }
}

fn run(cli: Cli) -> pqdaf_core::Result<()> {
    let g = cli.global;
    let flags = Overrides {
        seed: g.seed,
        k_shot: g.k_shot,
        ratio: g.ratio,
        tau: g.tau,
        scorer: g.scorer,
        scorer_endpoint: g.scorer_endpoint,
        out_dir: g.out_dir,
        deterministic: g.deterministic,
    };
    let mut cfg = PipelineConfig::load(g.config.as_deref(), &flags)?;
    let inputs = match &cli.command {
        Command::Generate(i)
        | Command::Filter(i)
        | Command::Mix(i)
        | Command::Train(i)
        | Command::Eval(i)
        | Command::Sweep(i) => Some(i),
        Command::ToyData | Command::TrainGenerator => None,
    };
    if let Some(i) = inputs {
        let p = &mut cfg.paths;
        for (slot, flag) in [
            (&mut p.real, &i.real),
            (&mut p.pool, &i.pool),
            (&mut p.checkpoint, &i.checkpoint),
            (&mut p.train, &i.train),
            (&mut p.eval, &i.eval),
            (&mut p.model, &i.model),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
    }
    match cli.command {
        Command::ToyData => commands::toy_data(&cfg),
        Command::TrainGenerator => commands::train_gen(&cfg),
        Command::Generate(_) => commands::generate_pool(&cfg),
        Command::Filter(_) => commands::filter_pool(&cfg),
        Command::Mix(_) => commands::mix_sets(&cfg),
        Command::Train(_) => commands::train_model(&cfg),
        Command::Eval(_) => commands::eval_model(&cfg),
        Command::Sweep(_) => commands::sweep(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("pqdaf: error[{}]: {msg}", kind_name(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
