//! `ltsap`: sampled-AP evaluation, long-tail data synthesis and training.
//!
//! Exit codes: 0 success, 1 I/O or numerical failure, 2 invalid
//! configuration, 3 unparseable input, 4 empty result (nothing eligible to
//! score), 5 replay produced different outputs.

mod evaluate;
mod manifest;
mod pools;
mod report;
mod split;
mod synth;
mod train;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "ltsap", version, about = "Sampled-AP evaluation and long-tail training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Generate a Zipf-distributed synthetic feature dataset.
    Synth(synth::SynthArgs),
    /// Per-category AP, mAP and ROC-AUC.
    Eval(evaluate::EvalArgs),
    /// Per-category sampled AP and mSAP.
    Sap(evaluate::SapArgs),
    /// Dispersion of the SAP estimate as the number of trials grows.
    Stability(evaluate::StabilityArgs),
    /// Head/tail split from train and validation AP reports.
    Split(split::SplitArgs),
    /// Train one of the training schemata on a feature dataset.
    Train(train::TrainArgs),
    /// Score a dataset with a trained checkpoint.
    Predict(train::PredictArgs),
    /// Summary tables and SVG charts from SAP reports.
    Report(report::ReportArgs),
    /// Re-run the command recorded in a manifest and verify its outputs.
    Replay(manifest::ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Eval(_) => "eval",
            Command::Sap(_) => "sap",
            Command::Stability(_) => "stability",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
        }
    }

    fn out_dir_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Synth(a) => Some(&mut a.out_dir),
            Command::Eval(a) => Some(&mut a.out_dir),
            Command::Sap(a) => Some(&mut a.out_dir),
            Command::Stability(a) => Some(&mut a.out_dir),
            Command::Split(a) => Some(&mut a.out_dir),
            Command::Train(a) => Some(&mut a.out_dir),
            Command::Predict(a) => Some(&mut a.out_dir),
            Command::Report(a) => Some(&mut a.out_dir),
            Command::Replay(_) => None,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Synth(a) => Some(a.seed),
            Command::Sap(a) => Some(a.seed),
            Command::Stability(a) => Some(a.seed),
            Command::Train(a) => Some(a.seed),
            _ => None,
        }
    }
}

/// Files a command read and wrote; outputs are named relative to `out_dir`.
#[derive(Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
}

/// An error that carries its own exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub message: String,
}

impl Exit {
    pub fn config(message: impl Into<String>) -> anyhow::Error {
        Exit { code: 2, message: message.into() }.into()
    }

    pub fn empty(message: impl Into<String>) -> anyhow::Error {
        Exit { code: 4, message: message.into() }.into()
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use ltsap::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Exit>() {
            return e.code;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Parse { .. } | E::Json(_) => 3,
                E::NoEligibleCategories { .. }
                | E::NoPositives(_)
                | E::EmptyDataset
                | E::EmptyCategory(_)
                | E::DegeneratePool(_) => 4,
                E::Io { .. } | E::NonFiniteLoss { .. } => 1,
                _ => 2,
            };
        }
    }
    1
}

/// Runs `command` and records it in `manifest.json` inside its output
/// directory. `argv` is the argument list that reproduces the run.
pub fn execute(command: Command, argv: Vec<String>) -> anyhow::Result<()> {
    let outcome = match &command {
        Command::Synth(a) => synth::run(a)?,
        Command::Eval(a) => evaluate::run_eval(a)?,
        Command::Sap(a) => evaluate::run_sap(a)?,
        Command::Stability(a) => evaluate::run_stability(a)?,
        Command::Split(a) => split::run(a)?,
        Command::Train(a) => train::run_train(a)?,
        Command::Predict(a) => train::run_predict(a)?,
        Command::Report(a) => report::run(a)?,
        Command::Replay(a) => return manifest::replay(a),
    };
    manifest::record(&command, argv, outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match execute(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
