//! `prunelab` command line: train, prune, fine-tune, evaluate and score
//! networks, run config-driven sweeps, and plot or correlate their CSVs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 sweep finished with failed rows.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "prunelab", version, about = "Prune small CNNs and measure what is left")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a fresh network and save a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
    },
    /// Prune a checkpoint without retraining.
    Prune {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "unstructured")]
        method: String,
        #[arg(long, default_value = "l1")]
        criterion: String,
        #[arg(long, default_value = "global")]
        scope: String,
        #[arg(long)]
        rate: f64,
        /// Seed for the random criterion.
        #[arg(long)]
        prune_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a (possibly pruned) checkpoint with its masks held fixed.
    Finetune {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report validation accuracy and sparsity of a checkpoint.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also print per-class accuracy.
        #[arg(long)]
        classwise: bool,
    },
    /// Score every unit of a checkpoint and write mis.csv.
    Mis {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        tasks: Option<usize>,
        /// Reference checkpoint; switches the observer to embedding cosine.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every plan of an experiment config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Draw an SVG line chart from two CSV columns.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        group_by: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pearson correlation of two CSV columns, appended to analysis.csv.
    Correlate {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        /// Keep only rows where `column=value`.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        analysis: Option<PathBuf>,
    },
}

/// Experiment config plus dataset overrides.
#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    /// Experiment config; its dataset, model and training sections are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic shapes class count.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// IDX image file; use with --idx-labels instead of synthetic data.
    #[arg(long, requires = "idx_labels")]
    idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    idx_labels: Option<PathBuf>,
    /// mini_inception or plain_cnn.
    #[arg(long)]
    arch: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    lr: Option<f32>,
    /// sgd or adam.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long)]
    gamma: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    early_stop: bool,
}

/// Why a command stopped.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Partial(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
            Self::Partial(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("config error: {e:#}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
                Failure::Partial(n) => eprintln!("sweep finished with {n} failed row(s)"),
            }
            ExitCode::from(f.code())
        }
    }
}
