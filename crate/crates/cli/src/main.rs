mod run;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vlmeval_core::prompts::Task;

/// Evaluate zero-shot vision-language pipelines on congestion, crack and
/// helmet datasets.
///
/// Bearer tokens for live endpoints are read from VLMEVAL_API_TOKEN.
/// Exit codes: 0 success, 1 configuration or usage error, 2 run completed
/// with failed samples.
#[derive(Debug, Parser)]
#[command(name = "vlmeval", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a classification pipeline over a manifest
    Classify(ClassifyArgs),
    /// Run a helmet detection pipeline over a manifest
    Detect(DetectArgs),
    /// Serve a mock fixture over the wire contract
    MockServe(MockServeArgs),
    /// Print sample and class counts of a manifest
    Inspect(InspectArgs),
    /// Rebuild reports from a finished run directory
    Report(ReportArgs),
    /// List the prompt catalog
    Prompts(PromptsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifyPipeline {
    /// Label-pair scoring on a similarity classifier (prompt ids A1-A5, B1-B5)
    Similarity,
    /// Two-turn description and follow-up on a chat model (P1F1-P5F5)
    Cascade,
    /// Single chat prompt (gpt-congestion, gpt-crack)
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectVariant {
    /// Basic-class detection plus rider association
    Postprocess,
    /// Sentence queries labelled by their mapped class
    Textual,
    /// Rider crops classified by a chat model
    CropChat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    /// Intersection over union
    Iou,
    /// Intersection over the smaller box
    Iomin,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Manifest CSV; image paths resolve against its directory
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory, created if missing
    #[arg(long)]
    out: PathBuf,
    /// Base URL of the model endpoint (not needed with --replay)
    #[arg(long)]
    endpoint: Option<String>,
    /// Record every backend exchange to this JSONL file (appends)
    #[arg(long, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Answer backend calls from this JSONL record store instead of the network
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Samples processed concurrently
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=1024))]
    max_inflight: u64,
    /// Per-request timeout in seconds
    #[arg(long, default_value_t = 60.0, value_parser = positive)]
    timeout_s: f64,
    /// Retries after a transport error, timeout, 429 or 5xx
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Model name shown in the report [default: the pipeline name]
    #[arg(long)]
    model: Option<String>,
    /// Append the published comparison rows for the task to the report
    #[arg(long)]
    published_rows: bool,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Task: congestion or crack
    #[arg(long)]
    task: Task,
    #[arg(long, value_enum)]
    pipeline: ClassifyPipeline,
    /// Prompt id from the catalog (see `vlmeval prompts`)
    #[arg(long)]
    prompt: String,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, value_enum)]
    variant: DetectVariant,
    /// Base URL of the chat endpoint for crop-chat (not needed with --replay)
    #[arg(long)]
    chat_endpoint: Option<String>,
    /// Chat prompt id for crop-chat
    #[arg(long, default_value = "gpt-helmet")]
    chat_prompt: String,
    /// Optional second chat turn for crop-chat, e.g. llava-helmet-followup
    #[arg(long)]
    follow_up: Option<String>,
    /// IoU above which NMS suppresses a lower-scored box
    #[arg(long, default_value_t = 0.5, value_parser = open_ratio)]
    nms_thresh: f64,
    /// Overlap above which a person binds to a motorbike or a helmet to a rider
    #[arg(long, default_value_t = 0.6, value_parser = open_ratio)]
    assoc_thresh: f64,
    /// Overlap metric used for association
    #[arg(long, value_enum, default_value = "iomin")]
    assoc_metric: MetricArg,
    /// Minimum detector score
    #[arg(long, default_value_t = 0.1, value_parser = open_ratio)]
    score_thresh: f64,
    /// Pixels added on each side of a rider crop
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    crop_pad: f64,
    /// IoU a prediction needs to match a ground-truth box
    #[arg(long, default_value_t = 0.5, value_parser = open_ratio)]
    match_iou: f64,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
pub struct MockServeArgs {
    /// Mock fixture JSON
    #[arg(long)]
    fixture: PathBuf,
    /// Address to bind
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Port to bind; 0 picks a free port
    #[arg(long, default_value_t = 0)]
    port: u16,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Classification or detection manifest CSV
    manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory holding run_config.json and results.jsonl
    #[arg(long)]
    run: PathBuf,
    /// Directory for the rebuilt report files [default: the run directory]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print one format (csv, markdown, json) to stdout instead of writing files
    #[arg(long)]
    format: Option<String>,
}

#[derive(Debug, Args)]
pub struct PromptsArgs {
    /// Only this task
    #[arg(long)]
    task: Option<Task>,
    /// Print JSON lines instead of tab-separated text
    #[arg(long)]
    jsonl: bool,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|_| format!("{s:?} is not a number"))
}

fn open_ratio(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must be strictly between 0 and 1, got {v}"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be non-negative, got {v}"))
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Classify(a) => run::classify(a).await,
        Command::Detect(a) => run::detect(a).await,
        Command::MockServe(a) => serve::serve(a).await.map(|()| ExitCode::SUCCESS),
        Command::Inspect(a) => run::inspect(a),
        Command::Report(a) => run::report(a),
        Command::Prompts(a) => run::prompts(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}
