//! `hacbsr`: dataset synthesis, single-image blind super-resolution runs,
//! evaluation against ground truth, stability-bound verification, and report
//! plotting.
//!
//! Exit codes are a stable contract: 0 success, 2 bad arguments or malformed
//! inputs, 3 I/O failures, 4 training divergence (artifacts still written),
//! 5 verification failure (reports still written).

mod eval;
mod font;
mod manifest;
mod plot;
mod run;
mod synth;
mod verify;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hacbsr_core::CoreError;

pub(crate) const EXIT_ARGS: u8 = 2;
pub(crate) const EXIT_IO: u8 = 3;
pub(crate) const EXIT_DIVERGED: u8 = 4;
pub(crate) const EXIT_VERIFY: u8 = 5;

/// Failure carrying the process exit code it maps to.
#[derive(Debug)]
pub(crate) struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn args(message: impl Into<String>) -> Self {
        CliError { code: EXIT_ARGS, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: EXIT_IO, message: message.into() }
    }

    pub fn diverged(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DIVERGED, message: message.into() }
    }

    pub fn verify(message: impl Into<String>) -> Self {
        CliError { code: EXIT_VERIFY, message: message.into() }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::Io { .. } => EXIT_IO,
            CoreError::Divergence { .. } => EXIT_DIVERGED,
            CoreError::Conditioning { .. } => EXIT_VERIFY,
            CoreError::InvalidArgument(_) | CoreError::Shape(_) | CoreError::Malformed { .. } => {
                EXIT_ARGS
            }
        };
        CliError { code, message: e.to_string() }
    }
}

pub(crate) type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "hacbsr",
    version,
    about = "Unsupervised blind super-resolution by alternating kernel and contrastive image learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known blur kernels and noise.
    SynthData(synth::SynthArgs),
    /// Train on one low-resolution image or on every observation of a dataset.
    Run(run::RunArgs),
    /// Score run outputs against a dataset's ground truth.
    Eval(eval::EvalArgs),
    /// Check the surrogate stability bounds on randomized linear instances.
    VerifyStability(verify::VerifyArgs),
    /// Render raster plots from run reports, stability tables, or sampling demos.
    PlotReport(plot::PlotArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::SynthData(args) => synth::execute(args),
        Command::Run(args) => run::execute(args),
        Command::Eval(args) => eval::execute(args),
        Command::VerifyStability(args) => verify::execute(args),
        Command::PlotReport(args) => plot::execute(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
