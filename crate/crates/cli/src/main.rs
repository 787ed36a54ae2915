//! `microsleep`: condition, train, predict, evaluate and embed MWT
//! recordings from the command line.

mod commands;
mod config;
mod outputs;
mod sigfile;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "microsleep", version, about = "Dense microsleep segmentation of MWT recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// `key = value` run configuration; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Network id: 2s, 4s, 8s, 16s, 32s, 16s_u, 16s_1c or cnn_lstm.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Band-pass every channel of an EDF recording into a `.sig` cache.
    Condition {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Split a labelled corpus by recording, train, and checkpoint each iteration.
    Train(commands::TrainArgs),
    /// Dense per-sample prediction, 0.5-s coarsening and episode list.
    Predict(commands::PredictArgs),
    /// Per-class kappa of a directory of predictions against reference labels.
    Evaluate(commands::EvaluateArgs),
    /// Hidden features of the embedding network projected to 2D with t-SNE.
    Embed(commands::EmbedArgs),
    /// Write a synthetic labelled corpus (EDF plus label files).
    Synth(commands::SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Condition { input, common } => commands::condition(&input, &common),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
