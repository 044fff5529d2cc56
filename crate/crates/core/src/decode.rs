//! Score selection from first-token scores: greedy readout and the
//! contrastive correction.
//!
//! Both paths restrict the model's first-token distribution to the
//! candidate score labels and renormalize. Raw logits and log-probs give
//! identical results here: the restricted softmax is invariant to the
//! per-item constant that separates them. The contrastive correction
//! subtracts a scaled assistant log-distribution from the main judge's,
//!
//! ```text
//! adjusted_i = log softmax(main)_i - lambda * log softmax(asst / temperature)_i
//! ```
//!
//! and picks the candidate with the largest adjusted value.

use crate::num::Real;
use crate::prompts::{Dimension, PromptSet};
use crate::providers::{Provider, ProviderError, TokenLogits};
use crate::ranges::{parse_score, JudgeScore, ScoreRange};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("lambda must be finite and non-negative, got {value}")]
    InvalidLambda { value: f64 },
    #[error("temperature must be finite and positive, got {value}")]
    InvalidTemperature { value: f64 },
    #[error("scores have mismatched lengths: main {main}, assistant {assistant}")]
    LengthMismatch { main: usize, assistant: usize },
    #[error("scores are empty")]
    Empty,
    #[error(
        "labels disagree at index {index}: main {main:?}, assistant {assistant:?}"
    )]
    LabelDisagreement {
        index: usize,
        main: String,
        assistant: String,
    },
    #[error("labels {got:?} do not match the range's candidates {expected:?}")]
    UnexpectedLabels { got: Vec<String>, expected: Vec<String> },
    #[error("prompt error: {0}")]
    Prompt(#[from] crate::prompts::PromptError),
    #[error("provider error: {0}")]
    Provider(#[from] ProviderError),
}

/// Contrastive correction parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ContrastiveConfig {
    pub lambda: f64,
    pub temperature: f64,
}

impl ContrastiveConfig {
    pub fn new(lambda: f64, temperature: f64) -> Result<Self, JudgeError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(JudgeError::InvalidLambda { value: lambda });
        }
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(JudgeError::InvalidTemperature { value: temperature });
        }
        Ok(Self {
            lambda,
            temperature,
        })
    }
}

/// Log-probabilities of the candidate labels after restriction to the
/// candidate set at the given temperature: `log softmax(scores / t)`.
/// Max-subtraction keeps the intermediate exponentials in range.
pub fn temperature_log_probs<F: Real>(scores: &[F], temperature: F) -> Vec<F> {
    let mut max = F::neg_infinity();
    for &s in scores {
        let scaled = s / temperature;
        if scaled > max {
            max = scaled;
        }
    }
    let mut sum = F::zero();
    let shifted: Vec<F> = scores
        .iter()
        .map(|&s| {
            let value = s / temperature - max;
            sum = sum + value.exp();
            value
        })
        .collect();
    let log_sum = sum.ln();
    shifted.into_iter().map(|value| value - log_sum).collect()
}

/// Adjusted per-candidate values produced by the contrastive correction,
/// aligned with `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedScores<F> {
    pub labels: Vec<String>,
    pub values: Vec<F>,
}

impl<F: Real> AdjustedScores<F> {
    /// Index of the largest value; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, value) in self.values.iter().enumerate().skip(1) {
            if *value > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Applies the contrastive correction to one item's score pair.
pub fn contrastive_adjust<F: Real>(
    main: &TokenLogits,
    assistant: &TokenLogits,
    config: &ContrastiveConfig,
) -> Result<AdjustedScores<F>, JudgeError> {
    if main.labels.len() != assistant.labels.len() {
        return Err(JudgeError::LengthMismatch {
            main: main.labels.len(),
            assistant: assistant.labels.len(),
        });
    }
    if main.labels.is_empty() {
        return Err(JudgeError::Empty);
    }
    for (index, (m, a)) in main.labels.iter().zip(&assistant.labels).enumerate() {
        if m != a {
            return Err(JudgeError::LabelDisagreement {
                index,
                main: m.clone(),
                assistant: a.clone(),
            });
        }
    }
    let main_scores: Vec<F> = main
        .logits
        .iter()
        .map(|&v| F::from_f64_lossy(v))
        .collect();
    let asst_scores: Vec<F> = assistant
        .logits
        .iter()
        .map(|&v| F::from_f64_lossy(v))
        .collect();
    let main_log_probs = temperature_log_probs(&main_scores, F::one());
    let asst_log_probs =
        temperature_log_probs(&asst_scores, F::from_f64_lossy(config.temperature));
    let lambda = F::from_f64_lossy(config.lambda);
    let values = main_log_probs
        .iter()
        .zip(&asst_log_probs)
        .map(|(&m, &a)| m - lambda * a)
        .collect();
    Ok(AdjustedScores {
        labels: main.labels.clone(),
        values,
    })
}

/// Reads a score off adjusted values, requiring the label set to be
/// exactly the range's candidates.
pub fn select_score<F: Real>(
    adjusted: &AdjustedScores<F>,
    range: ScoreRange,
) -> Result<JudgeScore, JudgeError> {
    let expected = range.candidate_labels();
    if adjusted.labels != expected {
        return Err(JudgeError::UnexpectedLabels {
            got: adjusted.labels.clone(),
            expected,
        });
    }
    let value = range.min() + adjusted.argmax() as i32;
    Ok(JudgeScore::in_range(value, range).expect("argmax stays within the range"))
}

/// How a greedy (uncorrected) judgment is read from the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreedyMode {
    /// Let the model generate text and parse the first integer out of it.
    Text,
    /// Take the argmax over the candidate labels' first-token scores.
    Restricted,
}

/// One uncorrected judgment.
pub fn judge_greedy(
    provider: &dyn Provider,
    prompts: &PromptSet,
    dimension: Dimension,
    range: ScoreRange,
    document: &str,
    summary: &str,
    mode: GreedyMode,
) -> Result<JudgeScore, JudgeError> {
    let prompt = prompts.render(dimension, range, document, summary)?;
    match mode {
        GreedyMode::Text => {
            let text = provider.complete(&prompt)?;
            Ok(parse_score(&text, range))
        }
        GreedyMode::Restricted => {
            let labels = range.candidate_labels();
            let logits = provider.first_token_logits(&prompt, &labels)?;
            let value = range.min() + logits.argmax() as i32;
            Ok(JudgeScore::in_range(value, range).expect("argmax stays within the range"))
        }
    }
}

/// One corrected judgment over a main/assistant pair.
pub fn judge_contrastive(
    main: &dyn Provider,
    assistant: &dyn Provider,
    prompts: &PromptSet,
    dimension: Dimension,
    range: ScoreRange,
    document: &str,
    summary: &str,
    config: &ContrastiveConfig,
) -> Result<JudgeScore, JudgeError> {
    let prompt = prompts.render(dimension, range, document, summary)?;
    let labels = range.candidate_labels();
    let main_logits = main.first_token_logits(&prompt, &labels)?;
    let asst_logits = assistant.first_token_logits(&prompt, &labels)?;
    let adjusted: AdjustedScores<crate::Scalar> =
        contrastive_adjust(&main_logits, &asst_logits, config)?;
    select_score(&adjusted, range)
}
