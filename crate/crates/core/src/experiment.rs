//! End-to-end runs: split the corpus, optionally tune the correction on
//! the development slice, score every evaluation item for each
//! dimension/range cell, and write the report tree.
//!
//! Output layout under the chosen directory:
//!
//! ```text
//! correlations.csv      one row per cell
//! correlations.json     same rows as JSON
//! manifest.json         config, providers, corpus digest (no timestamps)
//! cells/<dimension>-<min>-<max>/
//!   items.csv           per-item human aggregate and prediction
//!   histogram.csv       prediction counts over the whole range
//!   logits_main.csv     mean per-label first-token score (logit modes)
//!   logits_assistant.csv  (contrastive only)
//!   grid.csv            full search table (grid-tuned runs only)
//! ```
//!
//! Reruns with the same inputs produce byte-identical files: items are
//! scored in parallel but collected in corpus order, and nothing
//! time- or path-dependent is written.

use crate::corpus::{aggregate_human_score, split_corpus, Corpus, CorpusError, SplitSpec};
use crate::decode::{contrastive_adjust, select_score, ContrastiveConfig, JudgeError};
use crate::prompts::{Dimension, PromptSet};
use crate::providers::{Provider, TokenLogits};
use crate::ranges::{parse_score, JudgeScore, ScoreRange};
use crate::stats::{
    correlation_report, logit_snapshot, score_histogram, write_histogram_csv,
    write_snapshot_csv, CorrelationReport, ScoreDistribution, SelectionMetric, StatsError,
};
use crate::tuning::{grid_search, write_grid_csv, Grid, GridResult, TuningError};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("corpus error: {0}")]
    Corpus(#[from] CorpusError),
    #[error("tuning error: {0}")]
    Tuning(#[from] TuningError),
    #[error("stats error: {0}")]
    Stats(#[from] StatsError),
    #[error("no dimensions requested")]
    NoDimensions,
    #[error("no score ranges requested")]
    NoRanges,
    #[error("contrastive mode needs an assistant provider")]
    MissingAssistant,
    #[error("contrastive mode needs fixed parameters or a search grid")]
    MissingContrastiveSetting,
    #[error("max failure rate must lie in [0, 1], got {value}")]
    InvalidFailureRate { value: f64 },
    #[error(
        "cell {dimension} {range}: {failed} of {total} items failed, above the {max} limit"
    )]
    FailureRateExceeded {
        dimension: Dimension,
        range: ScoreRange,
        failed: usize,
        total: usize,
        max: f64,
    },
    #[error("cell {dimension} {range}: only {usable} items scored, need at least 2")]
    TooFewScored {
        dimension: Dimension,
        range: ScoreRange,
        usable: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// How judgments are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Free generation, first integer parsed from the text.
    GreedyText,
    /// Argmax over candidate-label first-token scores.
    GreedyRestricted,
    /// Contrastive correction over a main/assistant pair.
    Contrastive,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::GreedyText => "greedy_text",
            Mode::GreedyRestricted => "greedy_restricted",
            Mode::Contrastive => "contrastive",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the correction parameters come from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveSetting {
    /// Use these parameters as given.
    Fixed(ContrastiveConfig),
    /// Tune on the development slice, per cell.
    Search(Grid),
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub dimensions: Vec<Dimension>,
    pub ranges: Vec<ScoreRange>,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrastive: Option<ContrastiveSetting>,
    pub metric: SelectionMetric,
    pub split: SplitSpec,
    /// Cells abort when failed / total exceeds this.
    pub max_failure_rate: f64,
}

pub const DEFAULT_MAX_FAILURE_RATE: f64 = 0.2;

impl ExperimentConfig {
    fn validate(&self, has_assistant: bool) -> Result<(), ExperimentError> {
        if self.dimensions.is_empty() {
            return Err(ExperimentError::NoDimensions);
        }
        if self.ranges.is_empty() {
            return Err(ExperimentError::NoRanges);
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(ExperimentError::InvalidFailureRate {
                value: self.max_failure_rate,
            });
        }
        if self.mode == Mode::Contrastive {
            if !has_assistant {
                return Err(ExperimentError::MissingAssistant);
            }
            if self.contrastive.is_none() {
                return Err(ExperimentError::MissingContrastiveSetting);
            }
        }
        Ok(())
    }
}

/// One dimension/range cell's outcome.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub dimension: Dimension,
    pub range: ScoreRange,
    /// Correction parameters used, if the mode has any.
    pub config: Option<ContrastiveConfig>,
    pub report: CorrelationReport<f64>,
    pub histogram: ScoreDistribution,
    pub grid: Option<GridResult>,
}

/// Whole-run outcome, in cell order (dimension-major).
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub cells: Vec<CellOutcome>,
    pub out_dir: PathBuf,
    pub eval_items: usize,
    pub dev_items: usize,
}

struct ScoredItem {
    human: f64,
    score: JudgeScore,
    main_logits: Option<TokenLogits>,
    assistant_logits: Option<TokenLogits>,
}

struct CellFailure {
    doc_id: String,
    system_id: String,
    reason: String,
}

fn score_one(
    eval: &Corpus,
    record_index: usize,
    dimension: Dimension,
    range: ScoreRange,
    labels: &[String],
    mode: Mode,
    config: Option<&ContrastiveConfig>,
    main: &dyn Provider,
    assistant: Option<&dyn Provider>,
    prompts: &PromptSet,
) -> Result<ScoredItem, String> {
    let record = &eval.summaries[record_index];
    let document = eval
        .document_text(&record.doc_id)
        .ok_or_else(|| format!("unknown document {}", record.doc_id))?;
    let human = aggregate_human_score(record, dimension).map_err(|e| e.to_string())?;
    let prompt = prompts
        .render(dimension, range, document, &record.summary)
        .map_err(|e| e.to_string())?;
    match mode {
        Mode::GreedyText => {
            let text = main.complete(&prompt).map_err(|e| e.to_string())?;
            Ok(ScoredItem {
                human,
                score: parse_score(&text, range),
                main_logits: None,
                assistant_logits: None,
            })
        }
        Mode::GreedyRestricted => {
            let logits = main
                .first_token_logits(&prompt, labels)
                .map_err(|e| e.to_string())?;
            let value = range.min() + logits.argmax() as i32;
            Ok(ScoredItem {
                human,
                score: JudgeScore::in_range(value, range)
                    .expect("argmax stays within the range"),
                main_logits: Some(logits),
                assistant_logits: None,
            })
        }
        Mode::Contrastive => {
            let assistant = assistant.expect("validated: assistant present");
            let config = config.expect("validated: parameters present");
            let main_logits = main
                .first_token_logits(&prompt, labels)
                .map_err(|e| e.to_string())?;
            let assistant_logits = assistant
                .first_token_logits(&prompt, labels)
                .map_err(|e| e.to_string())?;
            let score = contrastive_adjust::<crate::Scalar>(
                &main_logits,
                &assistant_logits,
                config,
            )
            .and_then(|adjusted| select_score(&adjusted, range))
            .map_err(|e: JudgeError| e.to_string())?;
            Ok(ScoredItem {
                human,
                score,
                main_logits: Some(main_logits),
                assistant_logits: Some(assistant_logits),
            })
        }
    }
}

fn cell_dir_name(dimension: Dimension, range: ScoreRange) -> String {
    format!("{dimension}-{}-{}", range.min(), range.max())
}

/// One row of correlations.csv / correlations.json.
#[derive(Debug, Serialize)]
struct CellRow<'a> {
    dimension: Dimension,
    range_min: i32,
    range_max: i32,
    mode: &'a str,
    lambda: Option<f64>,
    temperature: Option<f64>,
    pearson: f64,
    spearman: f64,
    kendall: f64,
    degenerate: bool,
    n: usize,
    failed: usize,
    parsed: u64,
    clamped_low: u64,
    clamped_high: u64,
    fallback_min: u64,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn corpus_digest(corpus: &Corpus) -> String {
    let mut hasher = Sha256::new();
    for document in &corpus.documents {
        hasher.update(serde_json::to_vec(document).expect("document serializes"));
        hasher.update([b'\n']);
    }
    for summary in &corpus.summaries {
        hasher.update(serde_json::to_vec(summary).expect("summary serializes"));
        hasher.update([b'\n']);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Runs the full measurement and writes the report tree. The assistant
/// provider is only consulted in contrastive mode.
pub fn run_experiment(
    corpus: &Corpus,
    config: &ExperimentConfig,
    main: &dyn Provider,
    assistant: Option<&dyn Provider>,
    prompts: &PromptSet,
    out_dir: &Path,
) -> Result<ExperimentOutcome, ExperimentError> {
    config.validate(assistant.is_some())?;
    corpus.validate()?;
    let (dev, eval) = split_corpus(corpus, &config.split)?;

    let mut cells = Vec::new();
    for &dimension in &config.dimensions {
        for &range in &config.ranges {
            let cell = run_cell(
                &dev, &eval, dimension, range, config, main, assistant, prompts, out_dir,
            )?;
            cells.push(cell);
        }
    }

    write_correlation_tables(&cells, config, out_dir)?;
    write_manifest(corpus, config, main, assistant, &cells, out_dir)?;
    Ok(ExperimentOutcome {
        cells,
        out_dir: out_dir.to_path_buf(),
        eval_items: eval.summaries.len(),
        dev_items: dev.summaries.len(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    dev: &Corpus,
    eval: &Corpus,
    dimension: Dimension,
    range: ScoreRange,
    config: &ExperimentConfig,
    main: &dyn Provider,
    assistant: Option<&dyn Provider>,
    prompts: &PromptSet,
    out_dir: &Path,
) -> Result<CellOutcome, ExperimentError> {
    // Resolve the correction parameters first; a grid search runs on the
    // development slice only.
    let (cell_config, grid) = match (config.mode, &config.contrastive) {
        (Mode::Contrastive, Some(ContrastiveSetting::Fixed(fixed))) => (Some(*fixed), None),
        (Mode::Contrastive, Some(ContrastiveSetting::Search(search_grid))) => {
            let result = grid_search(
                dev,
                dimension,
                range,
                main,
                assistant.expect("validated: assistant present"),
                prompts,
                search_grid,
                config.metric,
            )?;
            (Some(result.best), Some(result))
        }
        _ => (None, None),
    };

    let labels = range.candidate_labels();
    let results: Vec<Result<ScoredItem, String>> = (0..eval.summaries.len())
        .into_par_iter()
        .map(|index| {
            score_one(
                eval,
                index,
                dimension,
                range,
                &labels,
                config.mode,
                cell_config.as_ref(),
                main,
                assistant,
                prompts,
            )
        })
        .collect();

    let mut scored = Vec::new();
    let mut scored_records = Vec::new();
    let mut failures = Vec::new();
    for (index, result) in results.into_iter().enumerate() {
        let record = &eval.summaries[index];
        match result {
            Ok(item) => {
                scored.push(item);
                scored_records.push(index);
            }
            Err(reason) => failures.push(CellFailure {
                doc_id: record.doc_id.clone(),
                system_id: record.system_id.clone(),
                reason,
            }),
        }
    }

    let total = eval.summaries.len();
    if total > 0 {
        let rate = failures.len() as f64 / total as f64;
        if rate > config.max_failure_rate {
            return Err(ExperimentError::FailureRateExceeded {
                dimension,
                range,
                failed: failures.len(),
                total,
                max: config.max_failure_rate,
            });
        }
    }
    if scored.len() < 2 {
        return Err(ExperimentError::TooFewScored {
            dimension,
            range,
            usable: scored.len(),
        });
    }

    let human: Vec<f64> = scored.iter().map(|item| item.human).collect();
    let predictions: Vec<f64> = scored
        .iter()
        .map(|item| f64::from(item.score.value))
        .collect();
    let report = correlation_report(&predictions, &human, failures.len())?;
    let judge_scores: Vec<JudgeScore> = scored.iter().map(|item| item.score).collect();
    let histogram = score_histogram(&judge_scores, range);

    let cell_dir = out_dir.join("cells").join(cell_dir_name(dimension, range));
    write_cell_files(
        &cell_dir, eval, &scored, &scored_records, &failures, &histogram, grid.as_ref(),
    )?;

    Ok(CellOutcome {
        dimension,
        range,
        config: cell_config,
        report,
        histogram,
        grid,
    })
}

fn write_cell_files(
    cell_dir: &Path,
    eval: &Corpus,
    scored: &[ScoredItem],
    scored_records: &[usize],
    failures: &[CellFailure],
    histogram: &ScoreDistribution,
    grid: Option<&GridResult>,
) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(cell_dir).map_err(io_err(cell_dir))?;

    let mut items = Vec::new();
    writeln!(items, "doc_id,system_id,human,predicted,provenance,status").expect("vec write");
    for (item, &index) in scored.iter().zip(scored_records) {
        let record = &eval.summaries[index];
        writeln!(
            items,
            "{},{},{},{},{},ok",
            record.doc_id,
            record.system_id,
            item.human,
            item.score.value,
            item.score.provenance
        )
        .expect("vec write");
    }
    for failure in failures {
        writeln!(
            items,
            "{},{},,,,failed: {}",
            failure.doc_id,
            failure.system_id,
            failure.reason.replace([',', '\n'], ";")
        )
        .expect("vec write");
    }
    write_file(&cell_dir.join("items.csv"), &items)?;

    let mut hist_csv = Vec::new();
    write_histogram_csv(&mut hist_csv, histogram)?;
    write_file(&cell_dir.join("histogram.csv"), &hist_csv)?;

    let main_logits: Vec<TokenLogits> = scored
        .iter()
        .filter_map(|item| item.main_logits.clone())
        .collect();
    if let Some(snapshot) = logit_snapshot(&main_logits) {
        let mut csv = Vec::new();
        write_snapshot_csv(&mut csv, &snapshot)?;
        write_file(&cell_dir.join("logits_main.csv"), &csv)?;
    }
    let assistant_logits: Vec<TokenLogits> = scored
        .iter()
        .filter_map(|item| item.assistant_logits.clone())
        .collect();
    if let Some(snapshot) = logit_snapshot(&assistant_logits) {
        let mut csv = Vec::new();
        write_snapshot_csv(&mut csv, &snapshot)?;
        write_file(&cell_dir.join("logits_assistant.csv"), &csv)?;
    }

    if let Some(result) = grid {
        let mut csv = Vec::new();
        write_grid_csv(&mut csv, result)?;
        write_file(&cell_dir.join("grid.csv"), &csv)?;
    }
    Ok(())
}

fn cell_rows<'a>(cells: &'a [CellOutcome], config: &'a ExperimentConfig) -> Vec<CellRow<'a>> {
    cells
        .iter()
        .map(|cell| CellRow {
            dimension: cell.dimension,
            range_min: cell.range.min(),
            range_max: cell.range.max(),
            mode: config.mode.name(),
            lambda: cell.config.map(|c| c.lambda),
            temperature: cell.config.map(|c| c.temperature),
            pearson: cell.report.pearson.value,
            spearman: cell.report.spearman.value,
            kendall: cell.report.kendall.value,
            degenerate: cell.report.degenerate(),
            n: cell.report.n,
            failed: cell.report.failed,
            parsed: cell.histogram.parsed,
            clamped_low: cell.histogram.clamped_low,
            clamped_high: cell.histogram.clamped_high,
            fallback_min: cell.histogram.fallback_min,
        })
        .collect()
}

fn write_correlation_tables(
    cells: &[CellOutcome],
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(), ExperimentError> {
    let rows = cell_rows(cells, config);

    let mut csv = Vec::new();
    writeln!(
        csv,
        "dimension,range_min,range_max,mode,lambda,temperature,pearson,spearman,kendall,\
         degenerate,n,failed,parsed,clamped_low,clamped_high,fallback_min"
    )
    .expect("vec write");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.dimension,
            r.range_min,
            r.range_max,
            r.mode,
            r.lambda.map(|v| v.to_string()).unwrap_or_default(),
            r.temperature.map(|v| v.to_string()).unwrap_or_default(),
            r.pearson,
            r.spearman,
            r.kendall,
            r.degenerate,
            r.n,
            r.failed,
            r.parsed,
            r.clamped_low,
            r.clamped_high,
            r.fallback_min
        )
        .expect("vec write");
    }
    write_file(&out_dir.join("correlations.csv"), &csv)?;

    let json =
        serde_json::to_vec_pretty(&rows).expect("rows serialize");
    write_file(&out_dir.join("correlations.json"), &json)?;
    Ok(())
}

fn write_manifest(
    corpus: &Corpus,
    config: &ExperimentConfig,
    main: &dyn Provider,
    assistant: Option<&dyn Provider>,
    cells: &[CellOutcome],
    out_dir: &Path,
) -> Result<(), ExperimentError> {
    #[derive(Serialize)]
    struct ProviderInfo<'a> {
        id: &'a str,
        model_name: &'a str,
    }
    #[derive(Serialize)]
    struct ChosenCell {
        dimension: Dimension,
        range: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        temperature: Option<f64>,
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        config: &'a ExperimentConfig,
        config_sha256: String,
        corpus_sha256: String,
        main: ProviderInfo<'a>,
        #[serde(skip_serializing_if = "Option::is_none")]
        assistant: Option<ProviderInfo<'a>>,
        cells: Vec<ChosenCell>,
    }

    let config_bytes = serde_json::to_vec(config).expect("config serializes");
    let config_sha256 = Sha256::digest(&config_bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let manifest = Manifest {
        config,
        config_sha256,
        corpus_sha256: corpus_digest(corpus),
        main: ProviderInfo {
            id: main.id(),
            model_name: main.model_name(),
        },
        assistant: assistant.map(|a| ProviderInfo {
            id: a.id(),
            model_name: a.model_name(),
        }),
        cells: cells
            .iter()
            .map(|cell| ChosenCell {
                dimension: cell.dimension,
                range: cell.range.to_string(),
                lambda: cell.config.map(|c| c.lambda),
                temperature: cell.config.map(|c| c.temperature),
            })
            .collect(),
    };
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_file(&out_dir.join("manifest.json"), &bytes)
}
