//! Direct-assessment judging with language models: prompting, score
//! parsing, range-bias measurement against human annotations, and a
//! contrastive correction that subtracts a smaller assistant model's
//! first-token distribution from the main judge's before the score is
//! read off.
//!
//! Numeric kernels are generic over the scalar type via [`num::Real`];
//! [`Scalar`] fixes the default width used by the pipeline.

pub mod corpus;
pub mod decode;
pub mod experiment;
pub mod num;
pub mod prompts;
pub mod providers;
pub mod ranges;
pub mod stats;
pub mod tuning;

/// Default scalar width for pipeline-level code.
pub type Scalar = f64;

pub use corpus::{split_corpus, Corpus, SplitSpec};
pub use decode::{
    contrastive_adjust, judge_contrastive, judge_greedy, select_score,
    temperature_log_probs, AdjustedScores, ContrastiveConfig, GreedyMode,
};
pub use experiment::{
    run_experiment, ContrastiveSetting, ExperimentConfig, ExperimentOutcome, Mode,
};
pub use num::Real;
pub use prompts::{render_prompt, Dimension, PromptSet};
pub use providers::{build_provider, Provider, ProviderConfig, TokenLogits};
pub use ranges::{parse_score, JudgeScore, Provenance, ScoreRange};
pub use stats::{
    correlation_report, kendall, pearson, spearman, CorrelationReport,
    SelectionMetric,
};
pub use tuning::{grid_search, Grid, GridResult};
