mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Class-level test-driven generation harness.
#[derive(Debug, Parser)]
#[command(name = "tdd-harness", version)]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate classes, run private evaluation and write reports.
    Run(RunArgs),
    /// Check predicted schedules against ground-truth dependency graphs.
    Depcheck(DepcheckArgs),
    /// Recompute reports from a previous run's output directory.
    Report(ReportArgs),
    /// Load and validate a corpus.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Task ids or glob patterns, comma separated.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    /// tdd, holistic, incremental or compositional; comma separated for several.
    #[arg(long, value_delimiter = ',')]
    strategy: Option<Vec<String>>,
    /// Chat-completions URL, or mock:path/to/script.json.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    repair_budget: Option<u32>,
    /// Repair from raw failure output without the reflection steps.
    #[arg(long)]
    no_reflection: bool,
    /// Follow the predicted order as given (default).
    #[arg(long, conflicts_with = "repair_order")]
    keep_order: bool,
    /// Reorder topologically over the predicted dependencies.
    #[arg(long)]
    repair_order: bool,
    /// Per-suite time limit in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Test runner command line, or fake:path/to/rules.json.
    #[arg(long)]
    runner: Option<String>,
}

#[derive(Debug, Args)]
struct DepcheckArgs {
    /// Corpus providing ground-truth graphs.
    #[arg(long, required_unless_present = "graphs")]
    corpus: Option<PathBuf>,
    /// JSON object mapping task id to {"nodes": [...], "edges": [[dependent, prerequisite], ...]}.
    #[arg(long, conflicts_with = "corpus")]
    graphs: Option<PathBuf>,
    /// JSON object mapping task id to a method order.
    #[arg(long, required_unless_present = "traces")]
    orders: Option<PathBuf>,
    /// traces.jsonl whose predicted schedules are checked.
    #[arg(long, conflicts_with = "orders")]
    traces: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Output directory of a previous run.
    #[arg(long)]
    out: PathBuf,
    /// Corpus to score against (default: the one recorded in run.json).
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    corpus: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .init();
    let result = match cli.command {
        Command::Run(a) => commands::cmd_run(a),
        Command::Depcheck(a) => commands::cmd_depcheck(a),
        Command::Report(a) => commands::cmd_report(a),
        Command::Validate(a) => commands::cmd_validate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<commands::UsageError>() {
                Some(_) => ExitCode::from(2),
                None => ExitCode::from(1),
            }
        }
    }
}
