use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use logbench::bench::{
    collect_rows, read_predictions, render_report, render_rows, replay, run_experiment,
    ExperimentConfig, Method, ReportFormat, RunOutcome,
};
use logbench::llm::{BackendConfig, BackendKind};
use logbench::load_dataset;
use logbench::metrics::evaluate;
use logbench::prompt::PromptVariant;

#[derive(Parser)]
#[command(
    name = "logbench",
    version,
    about = "Log template extraction benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Remote,
    MockEcho,
    MockFixture,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Llm,
    Drain,
}

#[derive(Clone, Copy, ValueEnum)]
enum PromptArg {
    Pt1,
    Pt2,
    Pt3,
    Pt4,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse datasets and score the predictions.
    Run {
        /// Dataset names, comma separated, or `all`.
        #[arg(long, value_delimiter = ',', required = true)]
        datasets: Vec<String>,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value = "llm")]
        method: MethodArg,
        /// Defaults to pt2 when --shots > 0, else pt1.
        #[arg(long, value_enum)]
        prompt: Option<PromptArg>,
        #[arg(long, default_value_t = 0, value_parser = parse_shots)]
        shots: usize,
        #[arg(long, value_enum, default_value = "mock-echo")]
        backend: BackendArg,
        #[arg(long, default_value = "gpt-3.5-turbo-0301")]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Response cache file (default: <out>/cache.jsonl).
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Chat-completion endpoint for the remote backend.
        #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
        endpoint: String,
        /// Canned responses for the mock-fixture backend.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 3)]
        max_retries: u32,
        #[arg(long, default_value_t = 60)]
        rpm: u32,
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
        /// Per-dataset Drain settings (default: bundled config).
        #[arg(long)]
        drain_config: Option<PathBuf>,
    },
    /// Score a predictions file against a labelled dataset.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
    /// Render the comparison table of a finished run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
    /// Re-run a recorded experiment from its manifest and cache only.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_shots(s: &str) -> Result<usize, String> {
    match s.parse() {
        Ok(n @ (0 | 1 | 2 | 4)) => Ok(n),
        _ => Err(format!("shots must be 0, 1, 2 or 4, got `{s}`")),
    }
}

/// Failures that mean the run could not be configured at all.
fn is_config_error(e: &logbench::bench::BenchError) -> bool {
    use logbench::bench::BenchError;
    use logbench::llm::LlmError;
    match e {
        BenchError::Config(_) | BenchError::Drain(_) => true,
        BenchError::Backend(inner) => matches!(
            inner,
            LlmError::Auth(_) | LlmError::Config(_) | LlmError::CacheIo { .. }
        ),
        BenchError::Io { .. } | BenchError::EmptyInput => false,
    }
}

fn finish(outcome: &RunOutcome) -> ExitCode {
    if let Ok(text) = render_rows(&outcome.rows(), ReportFormat::Table) {
        print!("{text}");
    }
    for f in outcome.failed() {
        eprintln!(
            "dataset {} failed{}: {}",
            f.name,
            f.line_id
                .map(|l| format!(" at line {l}"))
                .unwrap_or_default(),
            f.error.as_deref().unwrap_or("unknown error")
        );
    }
    if outcome.fully_succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            datasets,
            data_dir,
            method,
            prompt,
            shots,
            backend,
            model,
            seed,
            cache,
            out,
            endpoint,
            fixture,
            temperature,
            max_retries,
            rpm,
            timeout,
            max_in_flight,
            drain_config,
        } => {
            let variant = match prompt {
                Some(PromptArg::Pt1) => PromptVariant::Pt1,
                Some(PromptArg::Pt2) => PromptVariant::Pt2,
                Some(PromptArg::Pt3) => PromptVariant::Pt3,
                Some(PromptArg::Pt4) => PromptVariant::Pt4,
                None if shots > 0 => PromptVariant::Pt2,
                None => PromptVariant::Pt1,
            };
            let cfg = ExperimentConfig {
                dataset_names: ExperimentConfig::expand_datasets(&datasets),
                data_dir,
                method: match method {
                    MethodArg::Llm => Method::Llm,
                    MethodArg::Drain => Method::Drain,
                },
                variant,
                shots,
                seed,
                backend: BackendConfig {
                    kind: match backend {
                        BackendArg::Remote => BackendKind::Remote,
                        BackendArg::MockEcho => BackendKind::MockEcho,
                        BackendArg::MockFixture => BackendKind::MockFixture,
                    },
                    model_id: model,
                    endpoint_url: Some(endpoint),
                    temperature,
                    max_retries,
                    requests_per_minute: rpm,
                    timeout_seconds: timeout,
                    max_in_flight,
                    fixture_path: fixture,
                    ..BackendConfig::default()
                },
                cache_path: cache,
                drain_config,
                output_dir: out,
            };
            match run_experiment(&cfg) {
                Ok(outcome) => Ok(finish(&outcome)),
                Err(e) if is_config_error(&e) => {
                    eprintln!("error: {e}");
                    Ok(ExitCode::from(1))
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Eval {
            pred,
            truth,
            format,
        } => {
            let name = truth
                .file_name()
                .and_then(|f| f.to_str())
                .and_then(|f| f.split('_').next())
                .unwrap_or("dataset")
                .to_owned();
            let ds = load_dataset(&truth, &name)
                .with_context(|| format!("loading {}", truth.display()))?;
            let preds = read_predictions(&pred)?;
            let report = evaluate(&preds, &ds, false)?;
            print!("{}", render_report(&[report], format.into())?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { input, format } => {
            let rows = collect_rows(&input)?;
            print!("{}", render_rows(&rows, format.into())?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { manifest, out } => match replay(&manifest, &out) {
            Ok(outcome) => Ok(finish(&outcome)),
            Err(e) if is_config_error(&e) => {
                eprintln!("error: {e}");
                Ok(ExitCode::from(1))
            }
            Err(e) => Err(e.into()),
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
