//! Corpus loading, validation, aggregation, and dev/test splitting.
//!
//! The canonical on-disk form is JSONL with two record shapes: document lines
//! (`doc_id`, `text`) and summary lines (`doc_id`, `system_id`, `summary`,
//! `expert_annotations`). Expert annotations are objects with integer scores
//! 1-5 under `coherence`, `relevance`, and `consistency` keys. File order is
//! canonical: loaders and writers preserve it so downstream reports are
//! byte-for-byte reproducible.

use crate::prompts::Dimension;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: invalid JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: missing field {field:?}")]
    MissingField { line: usize, field: &'static str },
    #[error("duplicate document {doc_id:?}")]
    DuplicateDocument { doc_id: String },
    #[error("document {doc_id:?} has empty text")]
    EmptyDocumentText { doc_id: String },
    #[error("summary ({doc_id:?}, {system_id:?}) references an unknown document")]
    UnknownDocument { doc_id: String, system_id: String },
    #[error("duplicate summary ({doc_id:?}, {system_id:?})")]
    DuplicateSummary { doc_id: String, system_id: String },
    #[error("summary ({doc_id:?}, {system_id:?}) has no expert annotations")]
    NoAnnotations { doc_id: String, system_id: String },
    #[error(
        "summary ({doc_id:?}, {system_id:?}) has {dimension} score {value} outside the 1-5 annotation scheme"
    )]
    AnnotationOutOfRange {
        doc_id: String,
        system_id: String,
        dimension: Dimension,
        value: i64,
    },
    #[error("summary ({doc_id:?}, {system_id:?}) carries no {dimension} annotations")]
    MissingDimension {
        doc_id: String,
        system_id: String,
        dimension: Dimension,
    },
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error("dev fraction must lie in [0, 1], got {value}")]
    InvalidDevFraction { value: f64 },
}

/// Source article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

/// One expert's scores for a summary. Absent keys mean the expert did not
/// annotate that dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExpertAnnotation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coherence: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relevance: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<i32>,
}

impl ExpertAnnotation {
    pub fn get(&self, dimension: Dimension) -> Option<i32> {
        match dimension {
            Dimension::Coherence => self.coherence,
            Dimension::Relevance => self.relevance,
            Dimension::Consistency => self.consistency,
        }
    }

    fn is_empty(&self) -> bool {
        self.coherence.is_none() && self.relevance.is_none() && self.consistency.is_none()
    }
}

/// System summary of a document plus its expert annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub doc_id: String,
    pub system_id: String,
    pub summary: String,
    pub expert_annotations: Vec<ExpertAnnotation>,
}

impl SummaryRecord {
    /// All expert scores for one dimension, in annotation order.
    pub fn dimension_scores(&self, dimension: Dimension) -> Vec<f64> {
        self.expert_annotations
            .iter()
            .filter_map(|a| a.get(dimension))
            .map(f64::from)
            .collect()
    }
}

/// Mean of the expert scores for one dimension.
pub fn aggregate_human_score(
    record: &SummaryRecord,
    dimension: Dimension,
) -> Result<f64, CorpusError> {
    let scores = record.dimension_scores(dimension);
    if scores.is_empty() {
        return Err(CorpusError::MissingDimension {
            doc_id: record.doc_id.clone(),
            system_id: record.system_id.clone(),
            dimension,
        });
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Documents plus summaries, in canonical (file) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub summaries: Vec<SummaryRecord>,
}

impl Corpus {
    pub fn document_text(&self, doc_id: &str) -> Option<&str> {
        self.documents
            .iter()
            .find(|d| d.doc_id == doc_id)
            .map(|d| d.text.as_str())
    }

    /// Cross-record invariants: unique non-empty documents, resolvable and
    /// unique summaries, annotations present and inside the 1-5 scheme.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.documents.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut doc_ids = HashSet::new();
        for doc in &self.documents {
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyDocumentText {
                    doc_id: doc.doc_id.clone(),
                });
            }
            if !doc_ids.insert(doc.doc_id.as_str()) {
                return Err(CorpusError::DuplicateDocument {
                    doc_id: doc.doc_id.clone(),
                });
            }
        }
        let mut summary_keys = HashSet::new();
        for record in &self.summaries {
            let key = (record.doc_id.as_str(), record.system_id.as_str());
            if !doc_ids.contains(record.doc_id.as_str()) {
                return Err(CorpusError::UnknownDocument {
                    doc_id: record.doc_id.clone(),
                    system_id: record.system_id.clone(),
                });
            }
            if !summary_keys.insert(key) {
                return Err(CorpusError::DuplicateSummary {
                    doc_id: record.doc_id.clone(),
                    system_id: record.system_id.clone(),
                });
            }
            if record.expert_annotations.is_empty()
                || record.expert_annotations.iter().all(|a| a.is_empty())
            {
                return Err(CorpusError::NoAnnotations {
                    doc_id: record.doc_id.clone(),
                    system_id: record.system_id.clone(),
                });
            }
            for annotation in &record.expert_annotations {
                for dimension in Dimension::ALL {
                    if let Some(value) = annotation.get(dimension) {
                        if !(1..=5).contains(&value) {
                            return Err(CorpusError::AnnotationOutOfRange {
                                doc_id: record.doc_id.clone(),
                                system_id: record.system_id.clone(),
                                dimension,
                                value: i64::from(value),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Summary counts per document, in document order.
    pub fn summaries_per_document(&self) -> Vec<(String, usize)> {
        self.documents
            .iter()
            .map(|d| {
                let count = self.summaries.iter().filter(|s| s.doc_id == d.doc_id).count();
                (d.doc_id.clone(), count)
            })
            .collect()
    }
}

fn require_str(
    obj: &serde_json::Map<String, serde_json::Value>,
    field: &'static str,
    line: usize,
) -> Result<String, CorpusError> {
    obj.get(field)
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or(CorpusError::MissingField { line, field })
}

fn annotation_value(
    value: &serde_json::Value,
    line: usize,
    key: &str,
) -> Result<i32, CorpusError> {
    let as_int = value.as_i64().or_else(|| {
        value
            .as_f64()
            .filter(|f| f.fract() == 0.0)
            .map(|f| f as i64)
    });
    match as_int {
        Some(v) => Ok(v as i32),
        None => Err(CorpusError::MalformedRecord {
            line,
            reason: format!("annotation {key:?} is not an integer: {value}"),
        }),
    }
}

fn parse_annotations(
    value: &serde_json::Value,
    line: usize,
) -> Result<Vec<ExpertAnnotation>, CorpusError> {
    let list = value.as_array().ok_or(CorpusError::MalformedRecord {
        line,
        reason: "expert_annotations is not a list".to_string(),
    })?;
    let mut out = Vec::with_capacity(list.len());
    for entry in list {
        let obj = entry.as_object().ok_or(CorpusError::MalformedRecord {
            line,
            reason: "expert annotation is not an object".to_string(),
        })?;
        let mut annotation = ExpertAnnotation::default();
        if let Some(v) = obj.get("coherence") {
            annotation.coherence = Some(annotation_value(v, line, "coherence")?);
        }
        if let Some(v) = obj.get("relevance") {
            annotation.relevance = Some(annotation_value(v, line, "relevance")?);
        }
        if let Some(v) = obj.get("consistency") {
            annotation.consistency = Some(annotation_value(v, line, "consistency")?);
        }
        out.push(annotation);
    }
    Ok(out)
}

/// Parses canonical JSONL from a reader. Blank lines are skipped; record
/// order is preserved.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: format!("<line {line_no}>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                line: line_no,
                source,
            })?;
        let obj = value.as_object().ok_or(CorpusError::MalformedRecord {
            line: line_no,
            reason: "record is not a JSON object".to_string(),
        })?;
        if obj.contains_key("system_id") || obj.contains_key("summary") {
            let record = SummaryRecord {
                doc_id: require_str(obj, "doc_id", line_no)?,
                system_id: require_str(obj, "system_id", line_no)?,
                summary: require_str(obj, "summary", line_no)?,
                expert_annotations: parse_annotations(
                    obj.get("expert_annotations")
                        .ok_or(CorpusError::MissingField {
                            line: line_no,
                            field: "expert_annotations",
                        })?,
                    line_no,
                )?,
            };
            corpus.summaries.push(record);
        } else if obj.contains_key("text") {
            corpus.documents.push(Document {
                doc_id: require_str(obj, "doc_id", line_no)?,
                text: require_str(obj, "text", line_no)?,
            });
        } else {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                reason: "record is neither a document (text) nor a summary (system_id, summary)"
                    .to_string(),
            });
        }
    }
    corpus.validate()?;
    Ok(corpus)
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(BufReader::new(file))
}

/// Writes canonical JSONL: each document line followed by its summaries.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for doc in &corpus.documents {
        let line = serde_json::to_string(doc).expect("document serializes");
        writeln!(out, "{line}").map_err(io_err)?;
        for record in corpus.summaries.iter().filter(|s| s.doc_id == doc.doc_id) {
            let line = serde_json::to_string(record).expect("summary serializes");
            writeln!(out, "{line}").map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// Dev/test split parameters. The split is at article granularity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dev_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub const DEFAULT_DEV_FRACTION: f64 = 0.1;

    pub fn new(dev_fraction: f64, seed: u64) -> Result<Self, CorpusError> {
        if !(0.0..=1.0).contains(&dev_fraction) || !dev_fraction.is_finite() {
            return Err(CorpusError::InvalidDevFraction {
                value: dev_fraction,
            });
        }
        Ok(Self { dev_fraction, seed })
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Deterministic seeded article split into (dev, test). Every document lands
/// in exactly one side; both sides keep canonical document order. The dev
/// document count is `round_half_up(dev_fraction * documents)`.
pub fn split_corpus(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus), CorpusError> {
    if corpus.documents.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    SplitSpec::new(spec.dev_fraction, spec.seed)?;
    let n = corpus.documents.len();
    let dev_count = round_half_up(spec.dev_fraction * n as f64).min(n);
    let mut shuffled: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shuffled.shuffle(&mut rng);
    let dev_indices: HashSet<usize> = shuffled[..dev_count].iter().copied().collect();

    let mut dev = Corpus::default();
    let mut test = Corpus::default();
    let mut dev_ids = HashSet::new();
    for (idx, doc) in corpus.documents.iter().enumerate() {
        if dev_indices.contains(&idx) {
            dev_ids.insert(doc.doc_id.as_str());
            dev.documents.push(doc.clone());
        } else {
            test.documents.push(doc.clone());
        }
    }
    for record in &corpus.summaries {
        if dev_ids.contains(record.doc_id.as_str()) {
            dev.summaries.push(record.clone());
        } else {
            test.summaries.push(record.clone());
        }
    }
    Ok((dev, test))
}

/// Formats the latent-quality marker embedded in synthetic summary text.
pub fn quality_marker(quality: f64) -> String {
    format!("sq={quality:.4}")
}

/// Reads the last latent-quality marker from text, if present.
pub fn extract_quality(text: &str) -> Option<f64> {
    let mut found = None;
    let mut rest = text;
    while let Some(at) = rest.find("sq=") {
        let tail = &rest[at + 3..];
        let end = tail
            .char_indices()
            .find(|(_, c)| !(c.is_ascii_digit() || *c == '.'))
            .map_or(tail.len(), |(i, _)| i);
        if let Ok(q) = tail[..end].parse::<f64>() {
            found = Some(q);
        }
        rest = &rest[at + 3..];
    }
    found
}

/// Label-bucket index for a latent quality on a `width`-point scale:
/// nearest position to `quality * (width - 1)`, ties toward the lower
/// position. Mirrors how an unbiased judge of the same signal would score.
pub fn quality_bucket(quality: f64, width: usize) -> usize {
    let center = quality * (width - 1) as f64;
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for i in 0..width {
        let dist = (i as f64 - center).abs();
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    best
}

/// Deterministic synthetic corpus: `docs` articles with `per_doc` summaries
/// each. Every summary embeds a latent quality `sq=` marker, and its three
/// expert annotations all equal the quality's 1-5 bucket, so an unbiased
/// judge of the same signal ranks items exactly as the annotations do.
pub fn synthetic_corpus(docs: usize, per_doc: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus::default();
    for d in 0..docs {
        let doc_id = format!("d{:04}", d + 1);
        let text = format!(
            "Synthetic article {doc_id}. A short report covering event {} in sector {}. \
             It lists the key facts, a quote, and a closing remark.",
            d + 1,
            d % 7
        );
        corpus.documents.push(Document {
            doc_id: doc_id.clone(),
            text,
        });
        for s in 0..per_doc {
            let raw: f64 = rng.gen_range(0.0..=1.0);
            let quality: f64 = format!("{raw:.4}").parse().expect("4dp float re-parses");
            let human = quality_bucket(quality, 5) as i32 + 1;
            let annotation = ExpertAnnotation {
                coherence: Some(human),
                relevance: Some(human),
                consistency: Some(human),
            };
            let system_id = format!("sys{:02}", s + 1);
            corpus.summaries.push(SummaryRecord {
                doc_id: doc_id.clone(),
                system_id: system_id.clone(),
                summary: format!(
                    "Synthetic summary by {system_id} for {doc_id} ({}). \
                     It restates the salient facts at fidelity {quality:.4}.",
                    quality_marker(quality)
                ),
                expert_annotations: vec![annotation; 3],
            });
        }
    }
    corpus
}

/// Conversion outcome: canonical counts plus non-fatal warnings.
#[derive(Debug, Clone)]
pub struct ConvertReport {
    pub documents: usize,
    pub summaries: usize,
    pub warnings: Vec<String>,
}

/// Converts an upstream SummEval annotation release (JSONL records with
/// `id`, `model_id`, `decoded`, `text`, and `expert_annotations`) into the
/// canonical corpus format. Fluency annotations are dropped. Re-running on
/// the same input produces identical bytes.
pub fn convert_summeval(input: &Path, output: &Path) -> Result<ConvertReport, CorpusError> {
    let file = std::fs::File::open(input).map_err(|source| CorpusError::Io {
        path: input.display().to_string(),
        source,
    })?;
    let mut corpus = Corpus::default();
    let mut seen_docs: BTreeMap<String, usize> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: input.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                line: line_no,
                source,
            })?;
        let obj = value.as_object().ok_or(CorpusError::MalformedRecord {
            line: line_no,
            reason: "record is not a JSON object".to_string(),
        })?;
        let doc_id = require_str(obj, "id", line_no)?;
        let system_id = require_str(obj, "model_id", line_no)?;
        let summary = require_str(obj, "decoded", line_no)?;
        let text = require_str(obj, "text", line_no)?;
        let annotations = parse_annotations(
            obj.get("expert_annotations")
                .ok_or(CorpusError::MissingField {
                    line: line_no,
                    field: "expert_annotations",
                })?,
            line_no,
        )?;
        match seen_docs.get(&doc_id) {
            None => {
                seen_docs.insert(doc_id.clone(), corpus.documents.len());
                corpus.documents.push(Document {
                    doc_id: doc_id.clone(),
                    text,
                });
            }
            Some(&at) => {
                if corpus.documents[at].text != text {
                    warnings.push(format!(
                        "line {line_no}: document {doc_id:?} repeats with different text; keeping the first"
                    ));
                }
            }
        }
        corpus.summaries.push(SummaryRecord {
            doc_id,
            system_id,
            summary,
            expert_annotations: annotations,
        });
    }
    corpus.validate()?;
    let counts = corpus.summaries_per_document();
    let first = counts.first().map(|(_, c)| *c).unwrap_or(0);
    if counts.iter().any(|(_, c)| *c != first) {
        warnings.push("summary counts per document are uneven".to_string());
    }
    if corpus.documents.len() != 100 || corpus.summaries.len() != 1600 {
        warnings.push(format!(
            "expected the full release (100 documents, 1600 summaries), got {} documents and {} summaries",
            corpus.documents.len(),
            corpus.summaries.len()
        ));
    }
    save_corpus(&corpus, output)?;
    Ok(ConvertReport {
        documents: corpus.documents.len(),
        summaries: corpus.summaries.len(),
        warnings,
    })
}
