//! `farfield` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage error, 3 configuration error, 4 runtime
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "farfield", version, about = "Far-field simulation, teacher/student training and keyword spotting")]
#[command(after_help = "Exit codes: 0 success, 2 usage error, 3 configuration error, 4 runtime failure.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Dotted override applied after the config file, e.g. `train.epochs=5`.
    /// May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Random seed; replaces the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if absent.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Utterance-level worker threads. Results do not depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (WAVs and a manifest).
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate far-field copies of the utterances in a manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Input manifest of close-talk audio.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Extract log-Mel features into feature archives.
    Featurize {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Train a network with hard CE or CTC.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Teacher/student compression into a new student architecture.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Teacher checkpoint.
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Teacher/student adaptation with a paired manifest.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Score a WAV file, or every record of a manifest, for the keyword.
    Spot {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// A `.wav` file or a manifest.
        #[arg(long = "in")]
        input: PathBuf,
        /// Decision threshold; replaces the config's `threshold`.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// CA/FA report from a score file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: PathBuf,
        /// Operating point as a correct-accept rate in (0, 1].
        #[arg(long)]
        target_ca: Option<f64>,
        /// Evaluate at this fixed threshold instead.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run the stage-by-stage ablation ladder.
    Ladder {
        #[command(flatten)]
        common: Common,
    },
    /// Re-run a command from its provenance record.
    Rerun {
        /// `provenance.json` written by an earlier run.
        #[arg(long)]
        provenance: PathBuf,
        #[arg(long, short = 'o')]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
