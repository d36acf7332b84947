//! The `anysleep` command line. Exit codes: 0 success, 1 internal failure,
//! 2 usage or configuration error (including unreadable or empty inputs).

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::evaluation::{AbsentStagePolicy, Scope};

pub use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable bounding the worker threads.
pub const THREADS_ENV: &str = "ANYSLEEP_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn usage(e: impl Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn internal(e: impl Display) -> Self {
        CliError::Internal(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "anysleep", version, about = "Channel-flexible sleep staging experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (EDF + sidecars + manifest).
    Synth(SynthArgs),
    /// Train a model; writes the best checkpoint and the run log.
    Train(TrainArgs),
    /// Stage probabilities and argmax hypnogram for one recording.
    Predict(PredictArgs),
    /// Score predicted hypnograms against reference hypnograms.
    Eval(EvalArgs),
    /// Arousal candidates from a probability file, optionally scored.
    Arousals(ArousalArgs),
    /// Stage-triplet features per 1.5-h block.
    Triplets(TripletArgs),
    /// Component evaluation counts per architecture.
    Cost(CostArgs),
    /// Mean attention weights per module and channel.
    AttnTrace(AttnArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Recordings in a single dataset named `synth` (overrides the config).
    #[arg(long, value_name = "N")]
    pub recordings: Option<usize>,
    /// Epochs per recording.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Continue from the state saved in `<out>/state`.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs in this invocation (the state is kept).
    #[arg(long, value_name = "N")]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// EDF recording.
    #[arg(long, value_name = "PATH")]
    pub recording: PathBuf,
    /// Predictions per 30-s epoch.
    #[arg(long, value_name = "R", default_value_t = 1)]
    pub resolution: usize,
    /// Channel names to keep, comma separated.
    #[arg(long, value_name = "NAME,...", value_delimiter = ',')]
    pub channels: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Predicted hypnogram CSV, or a directory of `*.hypnogram.csv`.
    #[arg(long, value_name = "PATH")]
    pub predictions: PathBuf,
    /// Reference hypnogram CSV, or a directory with matching file names.
    #[arg(long, value_name = "PATH")]
    pub truth: PathBuf,
    #[arg(long, value_name = "recording|dataset")]
    pub scope: Option<Scope>,
    #[arg(long, value_name = "exclude|zero")]
    pub absent_stage: Option<AbsentStagePolicy>,
    /// Recorded in the report.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ArousalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Probability CSV written by `predict`.
    #[arg(long, value_name = "PATH")]
    pub predictions: PathBuf,
    /// Annotated arousal events to score against.
    #[arg(long, value_name = "PATH")]
    pub events: Option<PathBuf>,
    /// Required resolution of the predictions, when given.
    #[arg(long, value_name = "R")]
    pub resolution: Option<usize>,
    #[arg(long, value_name = "union|summed")]
    pub overlap: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct TripletArgs {
    #[command(flatten)]
    pub common: Common,
    /// Probability CSV written by `predict`.
    #[arg(long, value_name = "PATH")]
    pub predictions: PathBuf,
    /// Reference hypnogram used for trimming; without it the predictions
    /// are averaged per 30-s epoch instead.
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
    #[arg(long, value_name = "R")]
    pub resolution: Option<usize>,
    /// Recording id written to the CSV (defaults to the file stem).
    #[arg(long, value_name = "ID")]
    pub id: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct CostArgs {
    #[command(flatten)]
    pub common: Common,
    /// Largest EEG channel count in the table.
    #[arg(long, value_name = "N", default_value_t = 6)]
    pub max_channels: u64,
    #[arg(long, value_name = "D", default_value_t = 12)]
    pub depth: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct AttnArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// EDF recordings (repeatable); all must carry the same channels.
    #[arg(long, value_name = "PATH", required = true)]
    pub recording: Vec<PathBuf>,
    #[arg(long, value_name = "NAME,...", value_delimiter = ',')]
    pub channels: Vec<String>,
}

/// Parses arguments, runs the command and returns the exit code. Errors
/// are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match configure_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Arousals(a) => commands::arousals(a),
        Command::Triplets(a) => commands::triplets(a),
        Command::Cost(a) => commands::cost(a),
        Command::AttnTrace(a) => commands::attn_trace(a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Usage("an output directory is required (--out DIR)".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["anysleep", "no-such-command"]), EXIT_USAGE);
        assert_eq!(run(["anysleep", "cost"]), EXIT_USAGE);
        assert_eq!(run(["anysleep", "eval", "--predictions", "x", "--truth", "y", "--scope", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["anysleep", "--help"]), EXIT_OK);
    }
}
