//! `envsound`: pretrain encoders, extract clip features, fuse them with
//! CCA, and train / evaluate linear probes.

mod commands;
mod config;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use envsound::encoder::InputKind;

#[derive(Parser)]
#[command(name = "envsound", version, about = "Contrastive environmental sound representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML run configuration (or a JSON run manifest to replay).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Held-out folds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub test_folds: Option<Vec<u32>>,
}

#[derive(Subcommand)]
enum Command {
    /// Contrastive pretraining of one encoder branch.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_kind)]
        input: InputKind,
        /// Override `train.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// One feature row per clip from a frozen encoder.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        input: Option<InputKind>,
    },
    /// Fit CCA on the training rows and write summed canonical variates.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// Waveform-branch matrix; its ids file sits alongside as `.ids.csv`.
        #[arg(long)]
        waveform: PathBuf,
        #[arg(long)]
        spectrogram: PathBuf,
    },
    /// Train a linear probe on the training rows of a feature matrix.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
    },
    /// Evaluate a probe on the held-out rows of a feature matrix.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        probe: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<InputKind, String> {
    s.parse().map_err(|e: envsound::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain { common, input, steps } => commands::pretrain(&common, input, steps),
        Command::Extract {
            common,
            checkpoint,
            input,
        } => commands::extract(&common, &checkpoint, input),
        Command::Fuse {
            common,
            waveform,
            spectrogram,
        } => commands::fuse(&common, &waveform, &spectrogram),
        Command::Probe { common, features } => commands::probe(&common, &features),
        Command::Eval {
            common,
            features,
            probe,
        } => commands::eval(&common, &features, &probe),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
