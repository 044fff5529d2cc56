//! Parameter search for the contrastive correction on a held-out
//! development slice.
//!
//! The expensive part of a search is the backend calls, and those do not
//! depend on the correction parameters: the candidate-set scores for
//! each item are fetched once per model (two calls per item) and every
//! grid point is evaluated by post-processing the same cached pairs. The
//! total number of backend calls is therefore `2 * items`, independent
//! of the grid size.

use crate::corpus::{aggregate_human_score, Corpus};
use crate::decode::{contrastive_adjust, select_score, ContrastiveConfig};
use crate::prompts::{Dimension, PromptSet};
use crate::providers::{Provider, TokenLogits};
use crate::ranges::ScoreRange;
use crate::stats::{correlation_report, CorrelationReport, SelectionMetric};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("grid axis {axis:?} is empty")]
    EmptyGridAxis { axis: &'static str },
    #[error("grid lambda must be finite and non-negative, got {value}")]
    InvalidLambda { value: f64 },
    #[error("grid temperature must be finite and positive, got {value}")]
    InvalidTemperature { value: f64 },
    #[error(
        "need at least 2 usable development items, got {usable} ({failed} failed)"
    )]
    TooFewItems { usable: usize, failed: usize },
    #[error("no grid point produced a usable correlation ({points} evaluated)")]
    NoUsablePoints { points: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Cartesian search space over correction parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Grid {
    lambdas: Vec<f64>,
    temperatures: Vec<f64>,
}

impl Grid {
    pub fn new(lambdas: Vec<f64>, temperatures: Vec<f64>) -> Result<Self, TuningError> {
        if lambdas.is_empty() {
            return Err(TuningError::EmptyGridAxis { axis: "lambda" });
        }
        if temperatures.is_empty() {
            return Err(TuningError::EmptyGridAxis { axis: "temperature" });
        }
        for &value in &lambdas {
            if !value.is_finite() || value < 0.0 {
                return Err(TuningError::InvalidLambda { value });
            }
        }
        for &value in &temperatures {
            if !value.is_finite() || value <= 0.0 {
                return Err(TuningError::InvalidTemperature { value });
            }
        }
        Ok(Self {
            lambdas,
            temperatures,
        })
    }

    /// The stock 4 x 6 search space.
    pub fn default_search() -> Self {
        Self {
            lambdas: vec![0.01, 0.1, 0.5, 1.0],
            temperatures: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn len(&self) -> usize {
        self.lambdas.len() * self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major traversal: lambda varies slowest.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lambdas.iter().flat_map(move |&lambda| {
            self.temperatures
                .iter()
                .map(move |&temperature| (lambda, temperature))
        })
    }
}

/// One development item that could not be scored.
#[derive(Debug, Clone)]
pub struct ItemFailure {
    pub doc_id: String,
    pub system_id: String,
    pub reason: String,
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub lambda: f64,
    pub temperature: f64,
    pub report: Option<CorrelationReport<f64>>,
    /// Why this point cannot win selection (degenerate correlation or a
    /// scoring error); `report` may still be present for inspection.
    pub excluded_reason: Option<String>,
}

/// Search output: the winning parameters plus the full table.
#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: ContrastiveConfig,
    pub best_report: CorrelationReport<f64>,
    pub metric: SelectionMetric,
    pub rows: Vec<GridRow>,
    pub items_used: usize,
    pub failures: Vec<ItemFailure>,
}

/// Per-item inputs gathered once and reused across every grid point.
struct PreparedItem {
    human: f64,
    main: TokenLogits,
    assistant: TokenLogits,
}

fn prepare_items(
    dev: &Corpus,
    dimension: Dimension,
    range: ScoreRange,
    main: &dyn Provider,
    assistant: &dyn Provider,
    prompts: &PromptSet,
) -> (Vec<PreparedItem>, Vec<ItemFailure>) {
    let labels = range.candidate_labels();
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for record in &dev.summaries {
        let prepared = (|| -> Result<PreparedItem, String> {
            let document = dev
                .document_text(&record.doc_id)
                .ok_or_else(|| format!("unknown document {}", record.doc_id))?;
            let human =
                aggregate_human_score(record, dimension).map_err(|e| e.to_string())?;
            let prompt = prompts
                .render(dimension, range, document, &record.summary)
                .map_err(|e| e.to_string())?;
            let main_logits = main
                .first_token_logits(&prompt, &labels)
                .map_err(|e| e.to_string())?;
            let assistant_logits = assistant
                .first_token_logits(&prompt, &labels)
                .map_err(|e| e.to_string())?;
            Ok(PreparedItem {
                human,
                main: main_logits,
                assistant: assistant_logits,
            })
        })();
        match prepared {
            Ok(item) => items.push(item),
            Err(reason) => failures.push(ItemFailure {
                doc_id: record.doc_id.clone(),
                system_id: record.system_id.clone(),
                reason,
            }),
        }
    }
    (items, failures)
}

/// Evaluates every grid point against the development slice and keeps
/// the parameters that maximize the selection metric.
///
/// Ties keep the LAST maximizer in row-major order. Points with equal
/// lambda/temperature ratio make identical per-item decisions (the
/// normalizing constants they differ by are constant across candidates,
/// so the argmax never moves), which makes exact ties routine; scanning
/// with `>=` settles each tie on the highest-lambda representative of
/// the ratio rather than an arbitrary earlier one.
pub fn grid_search(
    dev: &Corpus,
    dimension: Dimension,
    range: ScoreRange,
    main: &dyn Provider,
    assistant: &dyn Provider,
    prompts: &PromptSet,
    grid: &Grid,
    metric: SelectionMetric,
) -> Result<GridResult, TuningError> {
    let (items, failures) = prepare_items(dev, dimension, range, main, assistant, prompts);
    if items.len() < 2 {
        return Err(TuningError::TooFewItems {
            usable: items.len(),
            failed: failures.len(),
        });
    }
    let human: Vec<f64> = items.iter().map(|item| item.human).collect();

    let mut rows = Vec::with_capacity(grid.len());
    for (lambda, temperature) in grid.points() {
        let config = ContrastiveConfig::new(lambda, temperature)
            .expect("grid constructor validated the parameters");
        let mut predictions = Vec::with_capacity(items.len());
        let mut point_error = None;
        for item in &items {
            let scored = contrastive_adjust::<f64>(&item.main, &item.assistant, &config)
                .and_then(|adjusted| select_score(&adjusted, range));
            match scored {
                Ok(score) => predictions.push(f64::from(score.value)),
                Err(error) => {
                    point_error = Some(error.to_string());
                    break;
                }
            }
        }
        let row = match point_error {
            Some(reason) => GridRow {
                lambda,
                temperature,
                report: None,
                excluded_reason: Some(reason),
            },
            None => match correlation_report(&predictions, &human, failures.len()) {
                Ok(report) => GridRow {
                    lambda,
                    temperature,
                    report: Some(report),
                    excluded_reason: report
                        .degenerate()
                        .then(|| "degenerate correlation (zero variance)".to_string()),
                },
                Err(error) => GridRow {
                    lambda,
                    temperature,
                    report: None,
                    excluded_reason: Some(error.to_string()),
                },
            },
        };
        rows.push(row);
    }

    let mut best: Option<(usize, f64)> = None;
    for (index, row) in rows.iter().enumerate() {
        if row.excluded_reason.is_some() {
            continue;
        }
        let value = row.report.expect("non-excluded row has a report").metric(metric);
        match best {
            Some((_, best_value)) if value < best_value => {}
            _ => best = Some((index, value)),
        }
    }
    let Some((best_index, _)) = best else {
        return Err(TuningError::NoUsablePoints { points: rows.len() });
    };
    let best_row = &rows[best_index];
    Ok(GridResult {
        best: ContrastiveConfig::new(best_row.lambda, best_row.temperature)
            .expect("grid constructor validated the parameters"),
        best_report: best_row.report.expect("winning row has a report"),
        metric,
        rows,
        items_used: items.len(),
        failures,
    })
}

/// Writes the full grid table, marking the winning row.
pub fn write_grid_csv<W: Write>(mut out: W, result: &GridResult) -> Result<(), TuningError> {
    writeln!(
        out,
        "lambda,temperature,pearson,spearman,kendall,n,failed,selected,excluded_reason"
    )?;
    for row in &result.rows {
        let selected = (row.lambda == result.best.lambda
            && row.temperature == result.best.temperature
            && row.excluded_reason.is_none()) as u8;
        match &row.report {
            Some(report) => writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                row.lambda,
                row.temperature,
                report.pearson.value,
                report.spearman.value,
                report.kendall.value,
                report.n,
                report.failed,
                selected,
                row.excluded_reason.as_deref().unwrap_or("")
            )?,
            None => writeln!(
                out,
                "{},{},,,,,,{},{}",
                row.lambda,
                row.temperature,
                selected,
                row.excluded_reason.as_deref().unwrap_or("")
            )?,
        }
    }
    Ok(())
}
