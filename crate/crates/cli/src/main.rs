mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Backend, DecodeMethod};

/// Decoding, refinement and evaluation tools for Mandarin lip-reading output.
#[derive(Debug, Parser)]
#[command(name = "pinrefine", version)]
struct Cli {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for per-utterance work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Report on the syllable inventory and optionally segment or validate Pinyin.
    Inventory(InventoryArgs),
    /// Generate posterior files from a reference transcript list.
    Synth(SynthArgs),
    /// Decode posterior files into N-best records.
    Decode(DecodeArgs),
    /// Refine N-best records into final transcripts.
    Refine(RefineArgs),
    /// Score hypotheses against references with character error rate.
    Eval(EvalArgs),
    /// Build an instruction-tuning dataset from references.
    BuildData(BuildDataArgs),
    /// Train a character n-gram scorer.
    LmTrain(LmTrainArgs),
    /// Evaluate the multitask loss and check its gradients numerically.
    LossCheck(LossCheckArgs),
}

#[derive(Debug, Args)]
struct InventoryArgs {
    #[arg(long)]
    inventory: Option<PathBuf>,
    /// Unspaced Pinyin to segment; repeatable.
    #[arg(long)]
    segment: Vec<String>,
    /// Space-separated syllables to validate; repeatable.
    #[arg(long)]
    validate: Vec<String>,
    #[arg(long, default_value_t = 10)]
    max_results: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// `utt<TAB>text` reference list.
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    frames_per_token: Option<usize>,
    #[arg(long)]
    blank_gap: Option<usize>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Directory written by `synth` or laid out the same way.
    #[arg(long)]
    posteriors: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    method: Option<DecodeMethod>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    token_cutoff: Option<f64>,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    nbest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Model written by `lm-train`.
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    w_lm: Option<f64>,
    #[arg(long)]
    w_ac: Option<f64>,
    #[arg(long)]
    w_py: Option<f64>,
    /// Chat endpoint URL; the token variable comes from the config only.
    #[arg(long)]
    endpoint_url: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    refs: PathBuf,
    /// Refinement or N-best records (JSON lines).
    #[arg(long)]
    hyps: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-utterance TSV.
    #[arg(long)]
    per_utt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildDataArgs {
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Decoded checkpoint as NAME=PATH to N-best records; repeatable.
    #[arg(long = "nbest", value_name = "NAME=PATH")]
    nbest: Vec<String>,
    /// Ignore the configured synthetic sources.
    #[arg(long)]
    no_synthetic: bool,
    #[arg(long)]
    include_scores: bool,
}

#[derive(Debug, Args)]
struct LmTrainArgs {
    /// One sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    k: Option<f64>,
}

#[derive(Debug, Args)]
struct LossCheckArgs {
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 5)]
    vocab: usize,
    #[arg(long)]
    lambda_ctc: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Inventory(_) => "inventory",
            Self::Synth(_) => "synth",
            Self::Decode(_) => "decode",
            Self::Refine(_) => "refine",
            Self::Eval(_) => "eval",
            Self::BuildData(_) => "build-data",
            Self::LmTrain(_) => "lm-train",
            Self::LossCheck(_) => "loss-check",
        }
    }
}

fn report_error(command: &str, err: &anyhow::Error) {
    let message = format!("{err:#}");
    let line = serde_json::json!({"error": message, "command": command});
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", serde_json::json!({"error": first, "command": "args"}));
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("error")),
        )
        .init();
    let name = cli.command.name();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(name, &e);
            ExitCode::FAILURE
        }
    }
}
