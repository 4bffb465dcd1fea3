//! `qisa-lab`: train, evaluate and benchmark the attention variants.

mod bench;
mod commands;
mod run;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qisa_lab::attention::Variant;

#[derive(Parser)]
#[command(
    name = "qisa-lab",
    version,
    about = "Character-level GPT with classical, quantum-inspired and simulated-quantum attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

/// Where an experiment configuration comes from.
#[derive(Args, Clone, Debug, Default)]
pub struct ExperimentArgs {
    /// Experiment config (JSON), or a run manifest.json to reproduce
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,

    /// Named preset such as emb16-h1-qisa or emb16-h1-qisa-full
    #[arg(long)]
    pub preset: Option<String>,

    /// Seed for initialisation and batch order
    #[arg(long)]
    pub seed: Option<u64>,

    /// Corpus text file; overrides the config
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Commands {
    /// Train a model and write checkpoint, loss curve, metrics and manifest
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,

        /// Run directory for every artifact
        #[arg(long, default_value = "runs/latest")]
        out_dir: PathBuf,

        /// Stop after this many optimiser steps
        #[arg(long)]
        max_steps: Option<usize>,

        /// Skip the CE/CER/WER evaluation after training
        #[arg(long)]
        skip_metrics: bool,
    },

    /// Report test CE, CER and WER of a checkpoint
    Eval {
        /// Checkpoint directory written by `train`
        #[arg(long)]
        checkpoint: PathBuf,

        #[command(flatten)]
        exp: ExperimentArgs,

        /// Run inference through the observable cache (quantum variants)
        #[arg(long)]
        cached: bool,

        /// Cap on the number of CE windows (default: all)
        #[arg(long)]
        windows: Option<usize>,

        /// Also write eval.json here
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },

    /// Continue a prompt with a trained checkpoint
    Generate {
        /// Checkpoint directory written by `train`
        #[arg(long)]
        checkpoint: PathBuf,

        /// Text to continue; only its last `context` characters are used
        #[arg(long)]
        prompt: String,

        /// Characters to generate
        #[arg(long, default_value_t = 200)]
        chars: usize,

        /// Sample at this temperature instead of greedy decoding
        #[arg(long)]
        temperature: Option<f64>,

        /// Sampling seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Print per-head parameter counts of all six variants
    Params {
        #[command(flatten)]
        exp: ExperimentArgs,

        /// Embedding size (default: from config, else 16)
        #[arg(long)]
        embedding: Option<usize>,

        /// Attention heads (default: from config, else 1)
        #[arg(long)]
        heads: Option<usize>,

        /// Ansatz layers
        #[arg(long)]
        ansatz_layers: Option<usize>,

        /// Context length
        #[arg(long)]
        context: Option<usize>,

        /// Emit CSV instead of a table
        #[arg(long)]
        csv: bool,
    },

    /// Build the observable cache of a quantum checkpoint
    Cache {
        /// Checkpoint directory of a quantum variant
        #[arg(long)]
        checkpoint: PathBuf,

        /// Output file (default: <checkpoint>/observables.qobs)
        #[arg(long)]
        out: Option<PathBuf>,

        /// Random batches compared against the uncached forward
        #[arg(long, default_value_t = 10)]
        verify_batches: usize,
    },

    /// Time training and inference steps per variant
    Bench {
        #[command(flatten)]
        exp: ExperimentArgs,

        /// Variants to time (default: all six)
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,

        /// Sequences per timed step
        #[arg(long, default_value_t = 1024)]
        batch: usize,

        #[arg(long, default_value_t = bench::WARMUP)]
        warmup: usize,

        #[arg(long, default_value_t = bench::MEASURED)]
        iters: usize,

        /// Directory for bench.csv, bench.svg and the manifest
        #[arg(long, default_value = "runs/bench")]
        out_dir: PathBuf,
    },

    /// Explain where to get the training corpus
    FetchCorpusInfo {
        /// Corpus path to inspect
        #[arg(long, default_value = run::DEFAULT_CORPUS)]
        corpus: PathBuf,
    },
}

fn init_threads() {
    let Ok(v) = std::env::var("QISA_LAB_THREADS") else {
        return;
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring QISA_LAB_THREADS={v:?}; expected a positive integer"),
    }
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Commands::Train {
            exp,
            out_dir,
            max_steps,
            skip_metrics,
        } => commands::train(&exp, &out_dir, max_steps, skip_metrics),
        Commands::Eval {
            checkpoint,
            exp,
            cached,
            windows,
            out_dir,
        } => commands::eval(&checkpoint, &exp, cached, windows, out_dir.as_deref()),
        Commands::Generate {
            checkpoint,
            prompt,
            chars,
            temperature,
            seed,
        } => commands::generate(&checkpoint, &prompt, chars, temperature, seed),
        Commands::Params {
            exp,
            embedding,
            heads,
            ansatz_layers,
            context,
            csv,
        } => commands::params(&exp, embedding, heads, ansatz_layers, context, csv),
        Commands::Cache {
            checkpoint,
            out,
            verify_batches,
        } => commands::cache(&checkpoint, out.as_deref(), verify_batches),
        Commands::Bench {
            exp,
            variants,
            batch,
            warmup,
            iters,
            out_dir,
        } => bench::run(&exp, &variants, batch, warmup, iters, &out_dir),
        Commands::FetchCorpusInfo { corpus } => commands::fetch_corpus_info(&corpus),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(run::exit_code(&e))
        }
    }
}
