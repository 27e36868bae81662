//! Command-line front end: `decode`, `compare`, `eval`, `augment` and
//! `selftest`.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 backend
//! or service error, 4 partial failure.

mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{Backend, BackendSpec, DecoderKind, EmbeddingSpec, OutputFormat, RunConfig};

use crate::error::Error;
use crate::metrics::RefAggregate;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_backend() { EXIT_BACKEND } else { EXIT_CONFIG };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "faithdec", version, about = "Faithfulness-guided caption decoding toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Run manifest (TOML); flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated faithfulness weights, e.g. `0,0.8`.
    #[arg(long, global = true)]
    pub alpha: Option<String>,
    /// `tabular:PATH` or `tcp:HOST:PORT`.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// `store:PATH`, `bow[:PATH]` or `tcp:HOST:PORT`.
    #[arg(long, global = true)]
    pub embeddings: Option<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Caption every dataset row with the selected decoder.
    Decode(DecodeArgs),
    /// Score two decode runs against the same references.
    Compare(CompareArgs),
    /// Score captions (optionally split into hallucinated / clean).
    Eval(EvalArgs),
    /// Generate paraphrased and tag-injected captions.
    Augment(AugmentArgs),
    /// Run the bundled toy-model checks.
    Selftest,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DecodeArgs {
    /// JSONL rows with a `context_id` field.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub decoder: Option<DecoderKind>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub rollout_max_len: Option<usize>,
    #[arg(long)]
    pub expansions_per_beam: Option<usize>,
    #[arg(long)]
    pub n_best: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Baseline decode output.
    #[arg(long)]
    pub a: PathBuf,
    /// Decode output compared against the baseline.
    #[arg(long)]
    pub b: PathBuf,
    /// JSONL rows with `context_id` and `captions`.
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub ref_aggregate: Option<RefAggregateArg>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    /// JSONL of `{context_id, candidate, references, split?}`.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// Decode output to score against `--references`.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub ref_aggregate: Option<RefAggregateArg>,
    /// Exclude instances lacking embeddings instead of failing.
    #[arg(long)]
    pub skip_missing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RefAggregateArg {
    Max,
    Mean,
}

impl From<RefAggregateArg> for RefAggregate {
    fn from(a: RefAggregateArg) -> Self {
        match a {
            RefAggregateArg::Max => RefAggregate::Max,
            RefAggregateArg::Mean => RefAggregate::Mean,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
    /// `mock` or an HTTP endpoint URL.
    #[arg(long)]
    pub llm: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub paraphrase_template: Option<PathBuf>,
    #[arg(long)]
    pub inject_template: Option<PathBuf>,
    #[arg(long)]
    pub fewshots: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Binary entry point.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FD_LOG", "warn")).init();
    ExitCode::from(run(std::env::args_os()))
}
