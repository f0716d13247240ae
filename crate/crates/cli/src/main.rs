//! `svkit` command-line front end.
//!
//! Exit codes: 0 on success, 2 when a module rejects the data, 64 on usage
//! errors. Data goes to files, logs to standard error and machine-readable
//! summaries to standard output.

mod commands;
mod inputs;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub const EXIT_DATA: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<svkit::Error> for CliError {
    fn from(e: svkit::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "svkit",
    version,
    about = "Speaker-verification back end: scoring, normalization, calibration and evaluation"
)]
pub struct Cli {
    /// JSON file of dotted keys, e.g. {"asnorm.top_k": 200}. A run manifest also works.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cosine-score a trial list.
    Score(commands::ScoreArgs),
    /// Adaptive score normalization against an imposter cohort.
    Asnorm(commands::AsnormArgs),
    /// Quality-measure vectors for each trial.
    Qmf(commands::QmfArgs),
    /// Fit a calibration model on labeled trials.
    CalibrateTrain(commands::CalibrateTrainArgs),
    /// Apply a calibration model.
    CalibrateApply(commands::ApplyArgs),
    /// Fuse several systems, optionally through a calibration model.
    Fuse(commands::FuseArgs),
    /// EER and minDCF of a score file.
    Eval(commands::EvalArgs),
    /// Sample a balanced calibration trial list from metadata.
    BuildTrials(commands::BuildTrialsArgs),
    /// Log mel filterbank features of a WAV file.
    Fbank(commands::FbankArgs),
    /// Draw augmentation plans and optionally render them.
    Augment(commands::AugmentArgs),
    /// Two-step training of the toy embedding extractor.
    ToyTrain(commands::ToyTrainArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
    }
    let mut settings = settings::Settings::load(cli.config.as_deref())?;
    let seed = cli.seed;
    match cli.command {
        Command::Score(a) => commands::score(a, &mut settings),
        Command::Asnorm(a) => commands::asnorm(a, &mut settings),
        Command::Qmf(a) => commands::qmf(a, &mut settings),
        Command::CalibrateTrain(a) => commands::calibrate_train(a, seed, &mut settings),
        Command::CalibrateApply(a) => commands::calibrate_apply(a, &mut settings),
        Command::Fuse(a) => commands::fuse(a, &mut settings),
        Command::Eval(a) => commands::eval(a, &mut settings),
        Command::BuildTrials(a) => commands::build_trials(a, seed, &mut settings),
        Command::Fbank(a) => commands::fbank(a, &mut settings),
        Command::Augment(a) => commands::augment(a, seed, &mut settings),
        Command::ToyTrain(a) => commands::toy_train(a, seed, &mut settings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("svkit: usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("svkit: error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
