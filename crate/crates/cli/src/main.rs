//! Command-line front end for the judging harness.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 failure rate above the configured limit.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rangejudge::corpus::{convert_summeval, load_corpus, save_corpus, synthetic_corpus};
use rangejudge::experiment::{ExperimentError, DEFAULT_MAX_FAILURE_RATE};
use rangejudge::providers::build_provider;
use rangejudge::{
    run_experiment, ContrastiveConfig, ContrastiveSetting, Dimension, ExperimentConfig,
    Mode, PromptSet, ProviderConfig, ScoreRange, SelectionMetric, SplitSpec,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "rangejudge",
    version,
    about = "Score summaries with LLM judges across shifted score ranges, \
             measure the bias against human annotations, and correct it \
             with a contrastive main/assistant decode."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Judge every evaluation summary per dimension/range cell and write
    /// correlation, histogram, and logit reports.
    Run(RunArgs),
    /// Convert an upstream SummEval annotation release to the canonical
    /// JSON Lines corpus format.
    ConvertSummeval {
        /// Upstream annotation file (JSON Lines).
        #[arg(long)]
        input: PathBuf,
        /// Canonical corpus file to write.
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a deterministic synthetic corpus with latent quality
    /// markers and matching annotations.
    GenCorpus {
        /// Number of documents.
        #[arg(long, default_value_t = 100)]
        docs: usize,
        /// Summaries per document.
        #[arg(long, default_value_t = 16)]
        per_doc: usize,
        /// Generation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corpus file to write.
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Free generation; the first integer in the text is the score.
    GreedyText,
    /// Argmax over candidate-label first-token scores.
    GreedyRestricted,
    /// Main score adjusted by a scaled assistant score before argmax.
    Contrastive,
}

impl From<ModeArg> for Mode {
    fn from(value: ModeArg) -> Mode {
        match value {
            ModeArg::GreedyText => Mode::GreedyText,
            ModeArg::GreedyRestricted => Mode::GreedyRestricted,
            ModeArg::Contrastive => Mode::Contrastive,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Corpus file (canonical JSON Lines).
    #[arg(long)]
    corpus: PathBuf,
    /// Report directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Main judge backend description (TOML).
    #[arg(long)]
    main: PathBuf,
    /// Assistant backend description (TOML); contrastive mode only.
    #[arg(long)]
    assistant: Option<PathBuf>,
    /// Quality dimension to judge; repeat for several. Default: coherence.
    #[arg(long = "dimension", value_name = "DIMENSION")]
    dimensions: Vec<Dimension>,
    /// Score range MIN-MAX; repeat for several. Default: 1-5.
    #[arg(long = "range", value_name = "MIN-MAX")]
    ranges: Vec<ScoreRange>,
    /// How judgments are produced.
    #[arg(long, value_enum, default_value = "greedy-restricted")]
    mode: ModeArg,
    /// Assistant subtraction strength; requires --temp, contrastive only.
    #[arg(long)]
    lambda: Option<f64>,
    /// Assistant flattening temperature; requires --lambda.
    #[arg(long)]
    temp: Option<f64>,
    /// Tune lambda/temp per cell on the dev split over the default grid.
    #[arg(long, conflicts_with_all = ["lambda", "temp"])]
    grid: bool,
    /// Grid selection metric.
    #[arg(long, default_value = "spearman", value_parser = SelectionMetric::from_str)]
    metric: SelectionMetric,
    /// Dev/eval document split seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of documents held out for tuning.
    #[arg(long, default_value_t = SplitSpec::DEFAULT_DEV_FRACTION)]
    dev_fraction: f64,
    /// Backend response cache directory (read-write; replay endpoints
    /// read from it exclusively).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Abort a cell when its item failure rate exceeds this.
    #[arg(long, default_value_t = DEFAULT_MAX_FAILURE_RATE)]
    max_failure_rate: f64,
    /// Prompt template override directory (<dimension>.txt files).
    #[arg(long)]
    templates: Option<PathBuf>,
}

/// A failed invocation: what to print and which code to exit with.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn rate(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(err: ExperimentError) -> Self {
        match err {
            ExperimentError::FailureRateExceeded { .. } => Failure::rate(err.to_string()),
            ExperimentError::NoDimensions
            | ExperimentError::NoRanges
            | ExperimentError::MissingAssistant
            | ExperimentError::MissingContrastiveSetting
            | ExperimentError::InvalidFailureRate { .. } => Failure::config(err.to_string()),
            other => Failure::data(other.to_string()),
        }
    }
}

/// Decides where the contrastive parameters come from, rejecting flag
/// combinations that would silently ignore an input.
fn resolve_contrastive(
    mode: Mode,
    lambda: Option<f64>,
    temp: Option<f64>,
    grid: bool,
    has_assistant: bool,
) -> Result<Option<ContrastiveSetting>, Failure> {
    if mode != Mode::Contrastive {
        if lambda.is_some() || temp.is_some() || grid {
            return Err(Failure::config(
                "--lambda, --temp, and --grid apply to --mode contrastive only",
            ));
        }
        if has_assistant {
            return Err(Failure::config(
                "--assistant applies to --mode contrastive only",
            ));
        }
        return Ok(None);
    }
    if !has_assistant {
        return Err(Failure::config(
            "--mode contrastive requires --assistant",
        ));
    }
    if grid {
        return Ok(Some(ContrastiveSetting::Search(
            rangejudge::Grid::default_search(),
        )));
    }
    match (lambda, temp) {
        (Some(lambda), Some(temp)) => {
            let config = ContrastiveConfig::new(lambda, temp)
                .map_err(|err| Failure::config(err.to_string()))?;
            Ok(Some(ContrastiveSetting::Fixed(config)))
        }
        (None, None) => Err(Failure::config(
            "--mode contrastive requires --grid or both --lambda and --temp",
        )),
        _ => Err(Failure::config("--lambda and --temp must be given together")),
    }
}

fn load_provider_config(path: &Path) -> Result<ProviderConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|err| {
        Failure::config(format!("cannot read backend config {}: {err}", path.display()))
    })?;
    toml::from_str(&text).map_err(|err| {
        Failure::config(format!("backend config {}: {err}", path.display()))
    })
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mode = Mode::from(args.mode);
    let contrastive = resolve_contrastive(
        mode,
        args.lambda,
        args.temp,
        args.grid,
        args.assistant.is_some(),
    )?;
    let split = SplitSpec::new(args.dev_fraction, args.seed)
        .map_err(|err| Failure::config(err.to_string()))?;
    let prompts = match &args.templates {
        Some(dir) => PromptSet::from_dir(dir).map_err(|err| Failure::config(err.to_string()))?,
        None => PromptSet::builtin(),
    };
    let dimensions = if args.dimensions.is_empty() {
        vec![Dimension::Coherence]
    } else {
        args.dimensions
    };
    let ranges = if args.ranges.is_empty() {
        vec![ScoreRange::new(1, 5).expect("static bounds")]
    } else {
        args.ranges
    };

    let main_config = load_provider_config(&args.main)?;
    let cache_dir = args.cache.as_deref();
    let main = build_provider(&main_config, cache_dir)
        .map_err(|err| Failure::config(err.to_string()))?;
    let assistant = match &args.assistant {
        Some(path) => Some(
            build_provider(&load_provider_config(path)?, cache_dir)
                .map_err(|err| Failure::config(err.to_string()))?,
        ),
        None => None,
    };

    let corpus = load_corpus(&args.corpus).map_err(|err| Failure::data(err.to_string()))?;
    let config = ExperimentConfig {
        dimensions,
        ranges,
        mode,
        contrastive,
        metric: args.metric,
        split,
        max_failure_rate: args.max_failure_rate,
    };
    let outcome = run_experiment(
        &corpus,
        &config,
        main.as_ref(),
        assistant.as_deref(),
        &prompts,
        &args.out,
    )?;

    println!(
        "{} dev / {} eval summaries; {} cell(s)",
        outcome.dev_items,
        outcome.eval_items,
        outcome.cells.len()
    );
    for cell in &outcome.cells {
        let params = match cell.config {
            Some(c) => format!(" lambda={} temp={}", c.lambda, c.temperature),
            None => String::new(),
        };
        println!(
            "{} {} {}{}: pearson={:.4} spearman={:.4} kendall={:.4} n={} failed={}{}",
            cell.dimension,
            cell.range,
            config.mode,
            params,
            cell.report.pearson.value,
            cell.report.spearman.value,
            cell.report.kendall.value,
            cell.report.n,
            cell.report.failed,
            if cell.report.degenerate() {
                " (degenerate)"
            } else {
                ""
            },
        );
    }
    println!("reports written to {}", outcome.out_dir.display());
    Ok(())
}

fn convert(input: &Path, output: &Path) -> Result<(), Failure> {
    let report = convert_summeval(input, output).map_err(|err| Failure::data(err.to_string()))?;
    println!(
        "{} documents, {} summaries -> {}",
        report.documents,
        report.summaries,
        output.display()
    );
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(())
}

fn gen_corpus(docs: usize, per_doc: usize, seed: u64, output: &Path) -> Result<(), Failure> {
    if docs == 0 || per_doc == 0 {
        return Err(Failure::config(
            "--docs and --per-doc must both be at least 1",
        ));
    }
    let corpus = synthetic_corpus(docs, per_doc, seed);
    save_corpus(&corpus, output).map_err(|err| Failure::data(err.to_string()))?;
    println!(
        "{} documents, {} summaries -> {}",
        corpus.documents.len(),
        corpus.summaries.len(),
        output.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::ConvertSummeval { input, output } => convert(&input, &output),
        Command::GenCorpus {
            docs,
            per_doc,
            seed,
            output,
        } => gen_corpus(docs, per_doc, seed, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
