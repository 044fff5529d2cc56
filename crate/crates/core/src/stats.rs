//! Rank and linear correlation between judge scores and human
//! annotations, plus the distribution summaries the reports are built
//! from.
//!
//! Pearson uses scaled centering: with `u_i = n*x_i - sum(x)` the
//! centered values of integer inputs stay integers, so shifting every
//! prediction by the same integer (as a score-range shift does) leaves
//! the coefficient bitwise unchanged. Spearman and Kendall depend only on
//! order and are exactly invariant by construction.

use crate::num::Real;
use crate::ranges::{Provenance, ScoreRange};
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {needed} paired observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite observation at index {index}")]
    NonFinite { index: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A correlation coefficient; `degenerate` marks inputs with zero
/// variance on either side, where the coefficient is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coefficient<F> {
    pub value: F,
    pub degenerate: bool,
}

fn check_pairs<F: Real>(x: &[F], y: &[F]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewObservations {
            needed: 2,
            got: x.len(),
        });
    }
    for (index, value) in x.iter().chain(y.iter()).enumerate() {
        if !value.is_finite() {
            return Err(StatsError::NonFinite { index: index % x.len() });
        }
    }
    Ok(())
}

fn clamp_unit<F: Real>(value: F) -> F {
    if value > F::one() {
        F::one()
    } else if value < -F::one() {
        -F::one()
    } else {
        value
    }
}

/// Pearson linear correlation.
pub fn pearson<F: Real>(x: &[F], y: &[F]) -> Result<Coefficient<F>, StatsError> {
    check_pairs(x, y)?;
    let n = F::from_usize_lossy(x.len());
    let sum_x = x.iter().fold(F::zero(), |acc, &v| acc + v);
    let sum_y = y.iter().fold(F::zero(), |acc, &v| acc + v);
    let mut uv = F::zero();
    let mut uu = F::zero();
    let mut vv = F::zero();
    for (&xi, &yi) in x.iter().zip(y) {
        let u = n * xi - sum_x;
        let v = n * yi - sum_y;
        uv = uv + u * v;
        uu = uu + u * u;
        vv = vv + v * v;
    }
    if uu == F::zero() || vv == F::zero() {
        return Ok(Coefficient {
            value: F::zero(),
            degenerate: true,
        });
    }
    Ok(Coefficient {
        value: clamp_unit(uv / (uu * vv).sqrt()),
        degenerate: false,
    })
}

/// Fractional ranks (1-based, ties averaged).
pub fn average_ranks<F: Real>(values: &[F]) -> Vec<F> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![F::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Average of 1-based ranks i+1 ..= j+1.
        let avg = F::from_usize_lossy(i + j + 2) / F::from_f64_lossy(2.0);
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman<F: Real>(x: &[F], y: &[F]) -> Result<Coefficient<F>, StatsError> {
    check_pairs(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Kendall rank correlation, tau-b (tie-corrected).
pub fn kendall<F: Real>(x: &[F], y: &[F]) -> Result<Coefficient<F>, StatsError> {
    check_pairs(x, y)?;
    let n = x.len();
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i].partial_cmp(&x[j]).expect("finite values");
            let dy = y[i].partial_cmp(&y[j]).expect("finite values");
            use std::cmp::Ordering::Equal;
            if dx == Equal || dy == Equal {
                continue;
            }
            if dx == dy {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let tie_pairs = |values: &[F]| -> u64 {
        let mut sorted: Vec<F> = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        let mut pairs = 0u64;
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as u64;
            pairs += t * (t - 1) / 2;
            i = j + 1;
        }
        pairs
    };
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = tie_pairs(x);
    let n2 = tie_pairs(y);
    if n1 == n0 || n2 == n0 {
        return Ok(Coefficient {
            value: F::zero(),
            degenerate: true,
        });
    }
    let num = F::from_f64_lossy(concordant as f64 - discordant as f64);
    let den = (F::from_f64_lossy((n0 - n1) as f64) * F::from_f64_lossy((n0 - n2) as f64)).sqrt();
    Ok(Coefficient {
        value: clamp_unit(num / den),
        degenerate: false,
    })
}

/// All three coefficients for one prediction/annotation pairing, plus
/// bookkeeping about how many items contributed.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CorrelationReport<F> {
    pub pearson: Coefficient<F>,
    pub spearman: Coefficient<F>,
    pub kendall: Coefficient<F>,
    /// Paired observations the coefficients were computed over.
    pub n: usize,
    /// Items excluded upstream (backend failures), not part of `n`.
    pub failed: usize,
}

impl<F: Real> CorrelationReport<F> {
    pub fn degenerate(&self) -> bool {
        self.pearson.degenerate || self.spearman.degenerate || self.kendall.degenerate
    }

    pub fn metric(&self, metric: SelectionMetric) -> F {
        match metric {
            SelectionMetric::Pearson => self.pearson.value,
            SelectionMetric::Spearman => self.spearman.value,
            SelectionMetric::Kendall => self.kendall.value,
        }
    }
}

/// Which coefficient drives a model/parameter selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    Pearson,
    Spearman,
    Kendall,
}

impl Default for SelectionMetric {
    fn default() -> Self {
        SelectionMetric::Spearman
    }
}

impl SelectionMetric {
    pub const ALL: [SelectionMetric; 3] = [
        SelectionMetric::Pearson,
        SelectionMetric::Spearman,
        SelectionMetric::Kendall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionMetric::Pearson => "pearson",
            SelectionMetric::Spearman => "spearman",
            SelectionMetric::Kendall => "kendall",
        }
    }
}

impl std::fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SelectionMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(SelectionMetric::Pearson),
            "spearman" => Ok(SelectionMetric::Spearman),
            "kendall" => Ok(SelectionMetric::Kendall),
            other => Err(format!(
                "unknown metric {other:?}; expected pearson, spearman, or kendall"
            )),
        }
    }
}

/// Correlates predictions against human aggregates. `failed` counts
/// items dropped before this point; it is carried into the report.
pub fn correlation_report<F: Real>(
    predictions: &[F],
    human: &[F],
    failed: usize,
) -> Result<CorrelationReport<F>, StatsError> {
    Ok(CorrelationReport {
        pearson: pearson(predictions, human)?,
        spearman: spearman(predictions, human)?,
        kendall: kendall(predictions, human)?,
        n: predictions.len(),
        failed,
    })
}

/// Counts of each score value in a range, in range order, with parse
/// provenance tallies.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreDistribution {
    pub values: Vec<i32>,
    pub counts: Vec<u64>,
    pub parsed: u64,
    pub clamped_high: u64,
    pub clamped_low: u64,
    pub fallback_min: u64,
}

/// Histogram over every value the range admits, including zero-count
/// values, so distributions across ranges line up column for column.
pub fn score_histogram(
    scores: &[crate::ranges::JudgeScore],
    range: ScoreRange,
) -> ScoreDistribution {
    let values: Vec<i32> = range.values().collect();
    let mut counts = vec![0u64; values.len()];
    let mut parsed = 0;
    let mut clamped_high = 0;
    let mut clamped_low = 0;
    let mut fallback_min = 0;
    for score in scores {
        if let Some(position) = range.position_of(score.value) {
            counts[position] += 1;
        }
        match score.provenance {
            Provenance::Parsed => parsed += 1,
            Provenance::ClampedHigh => clamped_high += 1,
            Provenance::ClampedLow => clamped_low += 1,
            Provenance::FallbackMin => fallback_min += 1,
        }
    }
    ScoreDistribution {
        values,
        counts,
        parsed,
        clamped_high,
        clamped_low,
        fallback_min,
    }
}

/// Mean per-label score across items, for inspecting what a backend's
/// first-token distribution looks like over a candidate set.
#[derive(Debug, Clone, Serialize)]
pub struct LogitSnapshot {
    pub labels: Vec<String>,
    pub mean: Vec<f64>,
    pub items: usize,
}

pub fn logit_snapshot(
    per_item: &[crate::providers::TokenLogits],
) -> Option<LogitSnapshot> {
    let first = per_item.first()?;
    let mut mean = vec![0.0f64; first.labels.len()];
    for item in per_item {
        if item.labels != first.labels {
            return None;
        }
        for (slot, &value) in mean.iter_mut().zip(&item.logits) {
            *slot += value;
        }
    }
    let n = per_item.len() as f64;
    for slot in &mut mean {
        *slot /= n;
    }
    Some(LogitSnapshot {
        labels: first.labels.clone(),
        mean,
        items: per_item.len(),
    })
}

pub fn write_histogram_csv<W: Write>(
    mut out: W,
    histogram: &ScoreDistribution,
) -> Result<(), StatsError> {
    writeln!(out, "value,count")?;
    for (value, count) in histogram.values.iter().zip(&histogram.counts) {
        writeln!(out, "{value},{count}")?;
    }
    Ok(())
}

pub fn write_snapshot_csv<W: Write>(
    mut out: W,
    snapshot: &LogitSnapshot,
) -> Result<(), StatsError> {
    writeln!(out, "label,mean_score")?;
    for (label, mean) in snapshot.labels.iter().zip(&snapshot.mean) {
        writeln!(out, "{label},{mean}")?;
    }
    Ok(())
}
