use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use inkgrade_cli::commands::{self, RunContext};
use inkgrade_cli::config::PipelineConfig;

#[derive(Parser)]
#[command(name = "inkgrade", version, about = "Read and score handwritten answer sheets")]
struct Cli {
    /// TOML config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single worker thread, for bit-identical reruns.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overrides the output root.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render glyph corpora, answers, LM text and exam sheets.
    Generate,
    /// Train the recognizer ensemble on the pretraining glyphs.
    TrainRecognizer,
    /// Fine-tune the pretrained ensemble on exam-domain glyphs.
    Finetune,
    /// Train the character n-gram model and write ARPA.
    TrainLm,
    /// Train the answer scorer.
    TrainScorer,
    /// Pseudo-label exam glyphs from a small labelled seed set.
    Bootstrap,
    /// Segment, read and score sheets.
    Pipeline {
        /// Sheet manifest (JSON lines); defaults to the generated one.
        #[arg(long)]
        sheets: Option<PathBuf>,
    },
    /// Evaluate recognizers, or agreement between two rank files.
    Eval {
        #[arg(long, requires = "human")]
        system: Option<PathBuf>,
        #[arg(long, requires = "system")]
        human: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
        cfg.base_dir = PathBuf::new();
    }
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new().num_threads(1).build_global()?;
    }
    let ctx = RunContext::new(cfg, cli.deterministic);
    let m = match &cli.command {
        Command::Generate => commands::generate(&ctx)?,
        Command::TrainRecognizer => commands::train_recognizer(&ctx)?,
        Command::Finetune => commands::finetune(&ctx)?,
        Command::TrainLm => commands::train_language_model(&ctx)?,
        Command::TrainScorer => commands::train_score_model(&ctx)?,
        Command::Bootstrap => commands::bootstrap(&ctx)?,
        Command::Pipeline { sheets } => commands::pipeline(&ctx, sheets.as_deref())?,
        Command::Eval { system, human } => commands::eval(&ctx, system.as_deref(), human.as_deref())?,
    };
    println!("{}", serde_json::to_string(&m.metrics)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
