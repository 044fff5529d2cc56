//! Judge prompt templates and rendering.
//!
//! One template per evaluation dimension, stored as packaged text assets with
//! four placeholder tokens: `{min_range}`, `{max_range}`, `{{Document}}`, and
//! `{{Summary}}`. Substitution is single-pass, so placeholder-looking text
//! inside a document or summary is never re-expanded. Templates can be
//! overridden per dimension by a directory of `<dimension>.txt` files.

use crate::ranges::ScoreRange;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Summary-quality dimensions the harness can judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Coherence,
    Relevance,
    Consistency,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::Coherence,
        Dimension::Relevance,
        Dimension::Consistency,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Dimension::Coherence => "coherence",
            Dimension::Relevance => "relevance",
            Dimension::Consistency => "consistency",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, PromptError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "coherence" => Ok(Dimension::Coherence),
            "relevance" => Ok(Dimension::Relevance),
            "consistency" => Ok(Dimension::Consistency),
            other => Err(PromptError::UnknownDimension(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown dimension {0:?} (expected coherence, relevance, or consistency)")]
    UnknownDimension(String),
    #[error("template for {dimension} is missing placeholder {placeholder:?}")]
    MissingPlaceholder {
        dimension: Dimension,
        placeholder: &'static str,
    },
    #[error("rendered prompt for {dimension} still contains placeholder {placeholder:?}")]
    ResidualPlaceholder {
        dimension: Dimension,
        placeholder: &'static str,
    },
    #[error("document text is empty")]
    EmptyDocument,
    #[error("summary text is empty")]
    EmptySummary,
    #[error("failed to read template override {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub const MIN_RANGE_TOKEN: &str = "{min_range}";
pub const MAX_RANGE_TOKEN: &str = "{max_range}";
pub const DOCUMENT_TOKEN: &str = "{{Document}}";
pub const SUMMARY_TOKEN: &str = "{{Summary}}";

const PLACEHOLDERS: [&str; 4] = [
    DOCUMENT_TOKEN,
    SUMMARY_TOKEN,
    MIN_RANGE_TOKEN,
    MAX_RANGE_TOKEN,
];

pub const COHERENCE_TEMPLATE: &str = include_str!("prompts/assets/coherence.txt");
pub const RELEVANCE_TEMPLATE: &str = include_str!("prompts/assets/relevance.txt");
pub const CONSISTENCY_TEMPLATE: &str = include_str!("prompts/assets/consistency.txt");

/// A single dimension's template body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub dimension: Dimension,
    body: String,
}

impl PromptTemplate {
    /// Validates that the body carries all four placeholder tokens.
    pub fn new(dimension: Dimension, body: String) -> Result<Self, PromptError> {
        for placeholder in PLACEHOLDERS {
            if !body.contains(placeholder) {
                return Err(PromptError::MissingPlaceholder {
                    dimension,
                    placeholder,
                });
            }
        }
        Ok(Self { dimension, body })
    }

    pub fn builtin(dimension: Dimension) -> Self {
        let body = match dimension {
            Dimension::Coherence => COHERENCE_TEMPLATE,
            Dimension::Relevance => RELEVANCE_TEMPLATE,
            Dimension::Consistency => CONSISTENCY_TEMPLATE,
        };
        Self::new(dimension, body.to_string()).expect("packaged template carries all placeholders")
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

/// Replaces every occurrence of the given tokens in one left-to-right pass.
/// Substituted values are emitted verbatim and never re-scanned.
fn substitute(body: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while !rest.is_empty() {
        let next = pairs
            .iter()
            .filter_map(|(token, value)| rest.find(token).map(|at| (at, *token, *value)))
            .min_by_key(|(at, token, _)| (*at, usize::MAX - token.len()));
        match next {
            Some((at, token, value)) => {
                out.push_str(&rest[..at]);
                out.push_str(value);
                rest = &rest[at + token.len()..];
            }
            None => {
                out.push_str(rest);
                break;
            }
        }
    }
    out
}

/// The template set used for a run: builtin assets, optionally overridden.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<Dimension, PromptTemplate>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        let templates = Dimension::ALL
            .into_iter()
            .map(|d| (d, PromptTemplate::builtin(d)))
            .collect();
        Self { templates }
    }

    /// Loads `<dimension>.txt` overrides from `dir`; dimensions without an
    /// override file keep the builtin template.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for dimension in Dimension::ALL {
            let path = dir.join(format!("{dimension}.txt"));
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.templates
                .insert(dimension, PromptTemplate::new(dimension, body)?);
        }
        Ok(set)
    }

    pub fn template(&self, dimension: Dimension) -> &PromptTemplate {
        &self.templates[&dimension]
    }

    /// Renders the judge prompt for one summary. The document and summary
    /// must be non-empty, and the output may not retain any placeholder.
    pub fn render(
        &self,
        dimension: Dimension,
        range: ScoreRange,
        document: &str,
        summary: &str,
    ) -> Result<String, PromptError> {
        if document.trim().is_empty() {
            return Err(PromptError::EmptyDocument);
        }
        if summary.trim().is_empty() {
            return Err(PromptError::EmptySummary);
        }
        let min = range.min().to_string();
        let max = range.max().to_string();
        let rendered = substitute(
            self.template(dimension).body(),
            &[
                (DOCUMENT_TOKEN, document),
                (SUMMARY_TOKEN, summary),
                (MIN_RANGE_TOKEN, &min),
                (MAX_RANGE_TOKEN, &max),
            ],
        );
        let injected = substitute(
            self.template(dimension).body(),
            &[
                (DOCUMENT_TOKEN, ""),
                (SUMMARY_TOKEN, ""),
                (MIN_RANGE_TOKEN, &min),
                (MAX_RANGE_TOKEN, &max),
            ],
        );
        for placeholder in PLACEHOLDERS {
            if injected.contains(placeholder) {
                return Err(PromptError::ResidualPlaceholder {
                    dimension,
                    placeholder,
                });
            }
        }
        Ok(rendered)
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Renders with the builtin template set.
pub fn render_prompt(
    dimension: Dimension,
    range: ScoreRange,
    document: &str,
    summary: &str,
) -> Result<String, PromptError> {
    PromptSet::builtin().render(dimension, range, document, summary)
}
