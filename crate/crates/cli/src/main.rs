use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use histner::evaluator::Scheme;
use histner::gateway::RunMode;
use histner::harness::ReportFormat;

mod commands;
mod error;

use error::CliError;

/// Named entity recognition for historical pages with chat-completion models.
#[derive(Debug, Parser)]
#[command(name = "histner", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Annotate pages with a model and write grounded predictions.
    Annotate(AnnotateArgs),
    /// Parse tagged model output into plain text, spans and warnings (JSON).
    Parse(ParseArgs),
    /// Locate tagged spans in a source text (JSON).
    Ground(GroundArgs),
    /// Score predictions against gold annotations.
    Evaluate(EvaluateArgs),
    /// Run an experiment spec and write its result table.
    Experiment(ExperimentArgs),
    /// Cut the example pool and print the shots a configuration would use.
    Shots(ShotsArgs),
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    /// Pages to annotate, one record per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Prompt configuration (TOML).
    #[arg(long)]
    prompt_config: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "replay")]
    mode: RunMode,
    /// Prediction file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "histner-cache")]
    cache_dir: PathBuf,
    /// Annotated pages to draw few-shot examples from.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pool_seed: u64,
    /// Directory with de.txt / en.txt prompt templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 16_384)]
    max_output_tokens: u32,
    #[arg(long)]
    request_seed: Option<u64>,
    #[arg(long, default_value = histner::gateway::DEFAULT_ENDPOINT)]
    endpoint: String,
    /// Maximum requests in flight.
    #[arg(long, default_value_t = 4)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct ParseArgs {
    /// File with tagged text; `-` reads standard input.
    #[arg(long, default_value = "-")]
    input: PathBuf,
    /// Comma-separated labels to recognise.
    #[arg(long, default_value = "PER,LOC,ORG")]
    labels: String,
}

#[derive(Debug, Args)]
struct GroundArgs {
    /// Plain source text.
    #[arg(long)]
    source: PathBuf,
    /// Tagged model output for the same text.
    #[arg(long)]
    tagged: PathBuf,
    #[arg(long, default_value_t = histner::grounding::DEFAULT_WINDOW_SLACK)]
    slack: usize,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value = "ent_type")]
    scheme: Scheme,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's gateway mode.
    #[arg(long)]
    mode: Option<RunMode>,
    /// Overrides the spec's request concurrency.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ShotsArgs {
    /// Annotated pages to cut examples from.
    #[arg(long)]
    pool: PathBuf,
    /// Pages whose ids must not contribute examples.
    #[arg(long)]
    exclude: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    pool_seed: u64,
    #[arg(long, default_value_t = 200)]
    min_len: usize,
    #[arg(long, default_value_t = 500)]
    max_len: usize,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Annotate(a) => commands::annotate(a),
        Command::Parse(a) => commands::parse(a),
        Command::Ground(a) => commands::ground(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Shots(a) => commands::shots(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
