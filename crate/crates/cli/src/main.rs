//! `gacr` — generation-augmented code retrieval pipeline.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

#[derive(Parser)]
#[command(
    name = "gacr",
    version,
    about = "Generation-augmented code retrieval: ingest, generate, train, index, search, evaluate"
)]
struct Cli {
    /// Config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Training/query mode: doc_only, gacr_s, or gacr_m.
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Attention mask type: A, B, C, or D.
    #[arg(long, global = true)]
    mask: Option<String>,

    /// Per-snippet token cap.
    #[arg(long, global = true)]
    cap: Option<usize>,

    /// Generated snippets per query for multi-snippet fusion.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Result-list length for search.
    #[arg(long = "top-k", global = true)]
    top_k: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate corpus files and print statistics.
    Ingest,
    /// Populate the snippet cache for a split.
    Gen {
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Write a seeded synthetic corpus to the configured train/test paths.
    Synth,
    /// Train the encoder and write checkpoint, vocabulary, and loss log.
    Train,
    /// Encode a split into a candidate index file.
    Index {
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Rank candidates for an ad-hoc documentation query.
    Search {
        #[arg(long)]
        query: String,
    },
    /// Evaluate query variants against the indexed pool.
    Eval,
    /// Ablation sweep over snippet caps or mask types.
    Sweep {
        /// Sweep axis: cap or mask.
        #[arg(long)]
        axis: String,
        /// Evaluate the existing checkpoint instead of retraining per value.
        #[arg(long)]
        fixed_checkpoint: bool,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        probes: usize,
    },
}

/// Marker for errors that are the caller's fault (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        mode: cli.mode,
        mask: cli.mask,
        cap: cli.cap,
        k: cli.k,
        jobs: cli.jobs,
        top_k: cli.top_k,
    };
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    gacr_core::set_parallelism(cfg.jobs)?;

    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Gen { split } => commands::gen(&cfg, &split),
        Command::Synth => commands::synth(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Index { split } => commands::index(&cfg, &split),
        Command::Search { query } => commands::search(&cfg, &query),
        Command::Eval => commands::eval(&cfg),
        Command::Sweep {
            axis,
            fixed_checkpoint,
        } => commands::sweep(&cfg, &axis, fixed_checkpoint),
        Command::Gradcheck { probes } => commands::gradcheck(&cfg, probes),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
