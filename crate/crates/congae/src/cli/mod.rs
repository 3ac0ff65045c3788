//! Command-line surface tying the pipeline together: ingest, train, score,
//! inject, eval, report. Every command validates its inputs before writing,
//! writes outputs atomically, and leaves a key=value run manifest next to its
//! primary output.

mod commands;
mod config;
mod manifest;

pub use config::TrainOverrides;
pub use manifest::{manifest_path, RunManifest};

use crate::anomaly_eval::EvalError;
use crate::model::ModelError;
use crate::nn_core::NnError;
use crate::training::TrainError;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use thiserror::Error;

/// Command failures bucketed by exit code: 1 usage/config, 2 data, 3 numeric.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    /// Prefixes the message with the file the failure concerns.
    fn with_path(self, path: &std::path::Path) -> CliError {
        let wrap = |m: String| format!("{}: {m}", path.display());
        match self {
            CliError::Usage(m) => CliError::Usage(wrap(m)),
            CliError::Data(m) => CliError::Data(wrap(m)),
            CliError::Numeric(m) => CliError::Numeric(wrap(m)),
        }
    }
}

fn classify_model(e: &ModelError, msg: String) -> CliError {
    match e {
        ModelError::Nn(NnError::NonFiniteGrad(_)) | ModelError::Nn(NnError::NonFiniteValue(_)) => {
            CliError::Numeric(msg)
        }
        ModelError::InvalidDims(_) | ModelError::DegenerateVariant => CliError::Usage(msg),
        _ => CliError::Data(msg),
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let msg = e.to_string();
        classify_model(&e, msg)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let msg = e.to_string();
        match e {
            TrainError::Config(_) => CliError::Usage(msg),
            TrainError::Model(m) => classify_model(&m, msg),
            TrainError::Data(_) | TrainError::Io(_) | TrainError::Corrupt(_) => CliError::Data(msg),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match e {
            EvalError::Config(_) => CliError::Usage(msg),
            EvalError::Data(_) | EvalError::UndefinedMetric(_) => CliError::Data(msg),
            EvalError::NonFiniteScore(_) => CliError::Numeric(msg),
            EvalError::Model(m) => classify_model(&m, msg),
            EvalError::Train(t) => CliError::from(t),
        }
    }
}

impl From<crate::od_graph::OdGraphError> for CliError {
    fn from(e: crate::od_graph::OdGraphError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "congae",
    version,
    about = "Context-aware graph autoencoder for OD travel-time anomaly detection"
)]
pub struct Cli {
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset container from OD records and zone features.
    Ingest(IngestArgs),
    /// Train a model, writing a checkpoint and an epoch report.
    Train(TrainArgs),
    /// Score every snapshot of a dataset with a trained checkpoint.
    Score(ScoreArgs),
    /// Pollute a clean dataset with synthetic anomalies.
    Inject(InjectArgs),
    /// Compute AUC of the checkpointed model (and baselines) on labeled data.
    Eval(EvalArgs),
    /// Run the full injection-grid experiment described by a config file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// OD record file: delimited text with a header row.
    #[arg(long)]
    pub records: PathBuf,
    /// Zone feature file with columns zone_id,min_lat,min_lon,max_lat,max_lon.
    #[arg(long)]
    pub zones: PathBuf,
    /// Output dataset container.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the K most connected zones (default: every zone in the feature file).
    #[arg(long)]
    pub top_zones: Option<usize>,
    /// Column holding the origin zone id.
    #[arg(long, default_value = "origin")]
    pub origin_col: String,
    /// Column holding the destination zone id.
    #[arg(long, default_value = "destination")]
    pub dest_col: String,
    /// Column holding the travel time in seconds.
    #[arg(long, default_value = "travel_time_seconds")]
    pub travel_col: String,
    /// Single timestamp column in YYYY-MM-DDTHH form.
    #[arg(long, default_value = "timestamp", conflicts_with_all = ["date_col", "hour_col"])]
    pub time_col: String,
    /// Date column (YYYY-MM-DD), paired with --hour-col.
    #[arg(long, requires = "hour_col")]
    pub date_col: Option<String>,
    /// Hour column (0..=23), paired with --date-col.
    #[arg(long, requires = "date_col")]
    pub hour_col: Option<String>,
    /// Field delimiter: a single character or the word `tab`.
    #[arg(long, default_value = ",")]
    pub delimiter: String,
    /// Collect malformed rows and continue instead of stopping at the first.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset container to train on.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch report CSV path (default: `<out>.report.csv`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Continue training from the checkpoint at --out; only --epochs may
    /// accompany this flag (the checkpoint's configuration is authoritative).
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Dataset container to score; labeled containers keep their labels.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output CSV with columns timestamp,score,label.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InjectKind {
    Spatial,
    Temporal,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Clean dataset container to pollute.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Anomaly type to inject.
    #[arg(long = "type", value_enum)]
    pub kind: InjectKind,
    /// Fraction of time slices polluted.
    #[arg(long)]
    pub gamma: f64,
    /// Fraction of edges perturbed per polluted slice (spatial only).
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Maximum relative travel-time perturbation (spatial only).
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Injection seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output labeled dataset container.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled dataset container.
    #[arg(long)]
    pub labeled: PathBuf,
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also score the historical-average baseline (needs --train-dataset).
    #[arg(long, requires = "train_dataset")]
    pub ha: bool,
    /// Clean training dataset the baseline statistics are fitted on.
    #[arg(long)]
    pub train_dataset: Option<PathBuf>,
    /// Output CSV with columns method,auc.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Experiment config file (key=value; see the config format docs).
    #[arg(long)]
    pub experiment: PathBuf,
    /// Output results CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the experiment's repeat count.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Override the experiment's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses argv, runs the requested command, and returns the process exit
/// code: 0 success, 1 usage/config, 2 data error, 3 numeric failure.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                0
            } else {
                1
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // First rayon touch in the process; a failure means a pool already
        // exists, in which case the cap is silently unavailable.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global();
    }
    let result = match &cli.command {
        Command::Ingest(args) => commands::cmd_ingest(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Score(args) => commands::cmd_score(args),
        Command::Inject(args) => commands::cmd_inject(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Report(args) => commands::cmd_report(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
