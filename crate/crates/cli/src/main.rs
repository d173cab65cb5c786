//! `landscaper` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

mod commands;
mod config;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use landscaper::nn::ModelVariant;
use landscaper::searchdsl::TargetField;

/// Bad flags, bad configuration, or a run directory in the wrong state.
#[derive(Debug)]
pub struct UsageError(pub String);

/// Missing, unreadable or malformed input data.
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for DataError {}

#[derive(Parser, Debug)]
#[command(name = "landscaper", version, about = "Patent landscaping pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Parent directory for generated run directories.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Write into this directory instead of a generated one.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Overwrite partial or conflicting output in --run-dir.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate and normalize a record file.
    Ingest(IngestArgs),
    /// Keep the records matched by a search formula.
    Filter(FilterArgs),
    /// Print the SQL form of a search formula.
    ConvertQuery(ConvertQueryArgs),
    /// Split valid patents 6:2:2 and undersample negatives.
    BuildDataset(BuildDatasetArgs),
    /// Train Diff2Vec embeddings for CPC, IPC and USPC codes.
    PretrainCodes(PretrainCodesArgs),
    /// Build the vocabulary and train token embeddings.
    PretrainText(PretrainTextArgs),
    /// Train the relevance classifier.
    Train(TrainArgs),
    /// Score labelled records and report AP and F1.
    Evaluate(EvaluateArgs),
    /// Score unlabelled records.
    Predict(PredictArgs),
    /// Generate a synthetic corpus with a planted relevance signal.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Record file (JSON lines or tab-separated).
    #[arg(long)]
    pub input: PathBuf,
    /// `jsonl` or `tsv`; guessed from the extension when absent.
    #[arg(long)]
    pub format: Option<String>,
    /// File of valid patent ids, one per line; overrides the `valid` field.
    #[arg(long)]
    pub valid_list: Option<PathBuf>,
    #[arg(long)]
    pub keep_empty_abstracts: bool,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    /// File holding the search formula.
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub format: Option<String>,
    /// `description` (title and abstract in local records), `abstract` or `title`.
    #[arg(long)]
    pub field: Option<TargetField>,
}

#[derive(Args, Debug)]
pub struct ConvertQueryArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub field: Option<TargetField>,
}

#[derive(Args, Debug)]
pub struct BuildDatasetArgs {
    /// Retrieved records, valid ones included.
    #[arg(long)]
    pub input: PathBuf,
    /// Extra records that only contribute to corpus-wide code statistics.
    #[arg(long)]
    pub reference: Vec<PathBuf>,
    /// Negatives for train, validation and test, e.g. `50000,10000,10000`.
    #[arg(long, value_parser = parse_triple)]
    pub negatives: Option<[usize; 3]>,
    /// Use every eligible negative, split 6:2:2.
    #[arg(long, conflicts_with = "negatives")]
    pub all_negatives: bool,
    #[arg(long)]
    pub valid_freq: Option<f64>,
    #[arg(long)]
    pub emergence_ratio: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PretrainCodesArgs {
    /// Dataset directory; graphs use all of its records.
    #[arg(long, required_unless_present = "input")]
    pub dataset: Option<PathBuf>,
    /// Record file to build the graphs from instead of a dataset.
    #[arg(long, conflicts_with = "dataset")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub dimension: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PretrainTextArgs {
    /// Dataset directory; the training split's abstracts are used.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub dimension: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory of `pretrain-codes`.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Output directory of `pretrain-text`.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<ModelVariant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub pos_weight: Option<f64>,
    #[arg(long)]
    pub freeze_token_embeddings: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Model checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory; see --split.
    #[arg(long, required_unless_present = "input")]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["train", "validation", "test"])]
    pub split: String,
    /// Labelled record file instead of a dataset split.
    #[arg(long, conflicts_with = "dataset")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    pub retrieved: usize,
    #[arg(long, default_value_t = 0.02)]
    pub positive_rate: f64,
    #[arg(long, default_value_t = 15_000)]
    pub background: usize,
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> =
        s.split(',').map(|p| p.trim().parse().map_err(|e| format!("`{p}`: {e}"))).collect::<Result<_, _>>()?;
    parts.try_into().map_err(|p: Vec<usize>| format!("expected three comma-separated counts, got {}", p.len()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use landscaper::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<DataError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidConfig(_) => 1,
                E::BackwardWithoutForward | E::FamilyMismatch { .. } | E::LengthMismatch { .. } => 3,
                _ => 2,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| commands::run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}
