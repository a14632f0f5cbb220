mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::UsageError;

/// Online clustering of trajectory symbol sequences.
#[derive(Debug, Parser)]
#[command(name = "seqstream", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epsilon=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stream sequences through one node; write its snapshot and assignments.
    Cluster {
        /// Sequence records, one JSON object per line.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Where to write the model snapshot.
        #[arg(long)]
        snapshot: PathBuf,
        /// Where to write the per-sequence assignment log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Start from a previously saved snapshot.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        node_id: u32,
    },
    /// Run observations through the two-layer pipeline.
    Pipeline {
        /// Observation records, one JSON object per line.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Where to write the tagged event log.
        #[arg(long)]
        events: PathBuf,
        /// Where to write all node snapshots.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Generate synthetic fixtures.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
    /// CCR per epsilon over shuffled repeats, as CSV.
    EvalSweep {
        #[command(flatten)]
        fixture: FixtureArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated epsilon values.
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8])]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Windowed CCR after every sequence, as CSV.
    EvalConverge {
        #[command(flatten)]
        fixture: FixtureArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 30)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretty-print a node or pipeline snapshot.
    Models { snapshot: PathBuf },
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// Labelled sequence records; the standard fixture is used when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Seed for the standard fixture and for shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum SynthKind {
    /// Labelled symbol sequences.
    Sequences {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 230)]
        n: usize,
        /// Per-symbol corruption probability.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, value_enum, default_value_t = NoiseArg::Mixed)]
        kind: NoiseArg,
        /// Comma-separated hex patterns; the eight standard ones by default.
        #[arg(long, value_delimiter = ',')]
        patterns: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Labelled object observations.
    Points {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 24)]
        objects: usize,
        /// Ticks between consecutive objects entering.
        #[arg(long, default_value_t = 10)]
        spacing: u64,
        /// JSON array of pattern specs; built-in crossings by default.
        #[arg(long)]
        patterns: Option<PathBuf>,
        /// Frame size as WIDTHxHEIGHT.
        #[arg(long, default_value = "40x40")]
        frame: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum NoiseArg {
    Insert,
    Substitute,
    Mixed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
