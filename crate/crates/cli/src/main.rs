//! `coreason`: operator surface for the experience-memory pipeline.
//!
//! Subcommands mirror the pipeline stages: `build-memory` searches reasoning
//! trees and harvests entries, `describe` annotates stored SQL, `index`
//! embeds the store, `retrieve` ranks exemplars for a query, `solve` answers
//! questions with contrastive prompts, `evaluate` scores predictions, and
//! `stats` reports the store's reward distribution.
//!
//! Logs go to standard error; data goes to files under `--out` or to
//! standard output. Exit codes: 0 success, 1 item-level or fatal errors,
//! 2 usage errors.

mod commands;
mod config;
mod manifest;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coreason::thinker::{PromptMode, TaskKind};
use coreason::BackendKind;

use crate::config::Resolved;

#[derive(Parser)]
#[command(
    name = "coreason",
    version,
    about = "Build experience memory with tree search, retrieve contrastive exemplars, solve, and evaluate"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Deterministic seed for the mock backend.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Generative backend.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendChoice>,
    /// Directory for artifacts and manifests (default: out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Concurrent items for build-memory and solve (default: backend parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Mock,
    Http,
}

impl From<BackendChoice> for BackendKind {
    fn from(choice: BackendChoice) -> BackendKind {
        match choice {
            BackendChoice::Mock => BackendKind::Mock,
            BackendChoice::Http => BackendKind::Http,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeChoice {
    #[value(name = "fixed")]
    Fixed,
    #[value(name = "pos_only")]
    PosOnly,
    #[value(name = "neg_only")]
    NegOnly,
    #[value(name = "pos_neg_single")]
    PosNegSingle,
    #[value(name = "pos_neg_two_round")]
    PosNegTwoRound,
}

impl From<ModeChoice> for PromptMode {
    fn from(choice: ModeChoice) -> PromptMode {
        match choice {
            ModeChoice::Fixed => PromptMode::Fixed,
            ModeChoice::PosOnly => PromptMode::PosOnly,
            ModeChoice::NegOnly => PromptMode::NegOnly,
            ModeChoice::PosNegSingle => PromptMode::PosNegSingle,
            ModeChoice::PosNegTwoRound => PromptMode::PosNegTwoRound,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskChoice {
    #[value(name = "text2sql")]
    Text2Sql,
    #[value(name = "tableqa")]
    Tableqa,
}

impl From<TaskChoice> for TaskKind {
    fn from(choice: TaskChoice) -> TaskKind {
        match choice {
            TaskChoice::Text2Sql => TaskKind::Text2Sql,
            TaskChoice::Tableqa => TaskKind::Tableqa,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Search reasoning trees over a questions file and append the harvested
    /// entries to the experience store.
    BuildMemory(BuildMemoryArgs),
    /// Fill in natural-language descriptions for stored answers.
    Describe(DescribeArgs),
    /// Embed the store into its vector-index sidecar.
    Index(IndexArgs),
    /// Rank stored entries against a query and print the candidate table.
    Retrieve(RetrieveArgs),
    /// Answer questions with contrastive prompts composed from the store.
    Solve(SolveArgs),
    /// Score predictions against gold answers.
    Evaluate(EvaluateArgs),
    /// Print the store's reward histogram and expansion factor.
    Stats(StatsArgs),
}

#[derive(Args)]
struct BuildMemoryArgs {
    /// Questions file (JSON Lines: id, question, evidence_path, gold?,
    /// difficulty?, db_path?).
    #[arg(long, value_name = "FILE")]
    questions: PathBuf,
    /// Experience store to append to (default: <out>/memory.jsonl).
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// Only process the first N questions.
    #[arg(short = 'n', long, value_name = "N")]
    limit: Option<usize>,
    /// Dataset label stamped on harvested entries.
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args)]
struct DescribeArgs {
    /// Experience store to annotate (default: <out>/memory.jsonl).
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// How stored answers should be described.
    #[arg(long, value_enum, default_value = "text2sql")]
    task: TaskChoice,
}

#[derive(Args)]
struct IndexArgs {
    /// Experience store to embed (default: <out>/memory.jsonl).
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    /// The query question.
    query: String,
    /// Experience store to search (default: <out>/memory.jsonl).
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// Candidates to rank (default: config retrieval.k).
    #[arg(long)]
    k: Option<usize>,
    /// Exemplars per side (default: config retrieval.n).
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    /// Questions file (JSON Lines).
    #[arg(long, value_name = "FILE")]
    questions: PathBuf,
    /// Experience store to retrieve from (default: <out>/memory.jsonl).
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// Predictions output (default: <out>/predictions.jsonl).
    #[arg(long, value_name = "FILE")]
    predictions: Option<PathBuf>,
    /// Prompt mode (default: config plan.mode).
    #[arg(long, value_enum)]
    mode: Option<ModeChoice>,
    /// Exemplars per side (default: config plan.shots_n).
    #[arg(long)]
    shots: Option<usize>,
    /// Task family (default: config plan.task_kind).
    #[arg(long, value_enum)]
    task: Option<TaskChoice>,
    /// Candidates to rank (default: config retrieval.k).
    #[arg(long)]
    k: Option<usize>,
    /// Exemplars per side to retrieve (default: config retrieval.n).
    #[arg(long)]
    n: Option<usize>,
    /// Refine each answer over I extra retrieve-and-generate rounds.
    #[arg(long, value_name = "I")]
    bootstrap: Option<usize>,
    /// Only process the first N questions.
    #[arg(short = 'n', long = "limit", value_name = "N")]
    limit: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Questions file carrying gold answers (and db_path for text2sql).
    #[arg(long, value_name = "FILE")]
    questions: PathBuf,
    /// Predictions file (default: <out>/predictions.jsonl).
    #[arg(long, value_name = "FILE")]
    predictions: Option<PathBuf>,
    /// Scoring method.
    #[arg(long, value_enum, default_value = "text2sql")]
    task: TaskChoice,
}

#[derive(Args)]
struct StatsArgs {
    /// Experience store to summarize (default: <out>/memory.jsonl).
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// Also write the histogram as CSV to this path.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

/// How a failed run maps to an exit code.
#[derive(Debug)]
enum CliError {
    /// Bad flag combination or unusable input shape.
    Usage(String),
    /// The run finished but some items failed.
    Items { failed: usize },
    /// The run could not proceed.
    Fatal(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> CliError {
        CliError::Fatal(err)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("usage error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Items { failed }) => {
            eprintln!("{failed} item(s) failed");
            ExitCode::from(1)
        }
        Err(CliError::Fatal(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let resolved = Resolved::from_flags(
        cli.global.config,
        cli.global.seed,
        cli.global.backend.map(Into::into),
        cli.global.out,
        cli.global.jobs,
    )?;
    match cli.command {
        Command::BuildMemory(args) => commands::build_memory(&resolved, &args),
        Command::Describe(args) => commands::describe(&resolved, &args),
        Command::Index(args) => commands::index(&resolved, &args),
        Command::Retrieve(args) => commands::retrieve(&resolved, &args),
        Command::Solve(args) => commands::solve(&resolved, &args),
        Command::Evaluate(args) => commands::evaluate(&resolved, &args),
        Command::Stats(args) => commands::stats(&resolved, &args),
    }
}
