//! `kwattn`: train, generate, evaluate and inspect keyword-global-attention
//! summarizers.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::UsageError;

#[derive(Parser, Debug)]
#[command(name = "kwattn", version, about)]
struct Cli {
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Configuration options shared by the experiment subcommands.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable. Applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run seed; every random draw is derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Background dictionary (`word<TAB>count` per line).
    #[arg(long, value_name = "FILE")]
    pub background: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fine-tune a model and write its checkpoint, vocabulary and loss log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training corpus (JSON lines with id, document, summary).
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
        /// Validation corpus used for epoch selection.
        #[arg(long, value_name = "FILE")]
        val: Option<PathBuf>,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Summarize every document of a corpus with a trained model.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory written by `train`.
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// JSON-lines output with `id` and `generated`.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score candidate summaries against references, matched by id.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        cand: PathBuf,
        #[arg(long = "ref", value_name = "FILE")]
        reference: PathBuf,
    },
    /// Print the keywords selected for a plain-text document.
    Keywords {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        background: Option<PathBuf>,
        /// Reference summary, read by the `oracle` source.
        #[arg(long, value_name = "FILE")]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "tfidf")]
        source: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export an attention mask as a PGM image.
    Pattern {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        half_width: usize,
        #[arg(long, default_value_t = 1)]
        dilation: usize,
        /// Comma-separated global positions (egad only).
        #[arg(long, value_delimiter = ',')]
        globals: Vec<usize>,
        /// Number of randomly placed globals (bigbird only).
        #[arg(long, default_value_t = 0)]
        random_globals: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Run the zero/few-shot protocol over sample sizes and keyword counts.
    Fewshot {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        val: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { cfg, train, val, out } => commands::train(&cfg, train, val, out),
        Command::Generate { cfg, model, corpus, out } => commands::generate(&cfg, &model, &corpus, &out),
        Command::Evaluate { cand, reference } => commands::evaluate(&cand, &reference),
        Command::Keywords { input, background, summary, k, source, seed } => {
            commands::keywords(&input, background.as_deref(), summary.as_deref(), k, &source, seed)
        }
        Command::Pattern { kind, n, half_width, dilation, globals, random_globals, seed, out } => {
            commands::pattern(&kind, n, half_width, dilation, globals, random_globals, seed, &out)
        }
        Command::Fewshot { cfg, train, val, out } => commands::fewshot(&cfg, train, val, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
