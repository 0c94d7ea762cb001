//! Labeled paragraph corpora.
//!
//! Documents are split into paragraphs on newlines; each paragraph carries a
//! section label. This module merges raw labels into meta-classes, renders
//! paragraphs with their neighbors as context, and draws seeded few-shot
//! bundles in the `{N}shots/set_k.csv` folder layout.

mod fewshot;
mod sample;
mod schema;

pub use fewshot::{
    build_fewshot_bundles, read_sample_csv, write_fewshot_tree, write_sample_csv, FewShotBundle, FewShotTree, SampleRow,
};
pub use sample::{build_samples, render_sample, ContextMode, Sample, DEFAULT_SEP};
pub use schema::{apply_schema, LabelSchema};

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("label {0:?} is not covered by the label schema")]
    UnknownLabel(String),
    #[error("invalid label schema: {0}")]
    InvalidSchema(String),
    #[error("invalid paragraph {doc_id}#{index}: {reason}")]
    InvalidParagraph {
        doc_id: String,
        index: usize,
        reason: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed input at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One newline-delimited paragraph of a document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Paragraph {
    pub doc_id: String,
    /// 0-based position within the document.
    pub index: usize,
    pub text: String,
    /// Section class; empty when the label is hidden (unlabeled pools).
    pub label: String,
}

impl Paragraph {
    pub fn new(doc_id: impl Into<String>, index: usize, text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            index,
            text: text.into(),
            label: label.into(),
        }
    }

    /// Stable identifier `doc_id#index`.
    pub fn id(&self) -> String {
        format!("{}#{}", self.doc_id, self.index)
    }
}

/// Check the corpus invariants: non-empty single-line texts, unique and
/// contiguous indices per document.
pub fn validate_corpus(corpus: &[Paragraph]) -> Result<(), CorpusError> {
    let mut per_doc: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for p in corpus {
        let bad = |reason: &str| CorpusError::InvalidParagraph {
            doc_id: p.doc_id.clone(),
            index: p.index,
            reason: reason.to_string(),
        };
        if p.text.trim().is_empty() {
            return Err(bad("empty text"));
        }
        if p.text.contains('\n') || p.text.contains('\r') {
            return Err(bad("text contains a newline"));
        }
        per_doc.entry(&p.doc_id).or_default().push(p.index);
    }
    for (doc, mut idx) in per_doc {
        idx.sort_unstable();
        for (expected, &got) in idx.iter().enumerate() {
            if got != expected {
                return Err(CorpusError::InvalidParagraph {
                    doc_id: doc.to_string(),
                    index: got,
                    reason: format!("indices not unique and contiguous (expected {expected})"),
                });
            }
        }
    }
    Ok(())
}

/// Read a JSONL corpus (`doc_id`, `index`, `text`, `label` per line).
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Paragraph>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Paragraph = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

pub fn read_jsonl_file(path: &Path) -> Result<Vec<Paragraph>, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(file))
}

pub fn write_jsonl<W: Write>(mut out: W, corpus: &[Paragraph]) -> Result<(), CorpusError> {
    for p in corpus {
        let line = serde_json::to_string(p).map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Class labels in first-appearance order.
pub fn labels_in_order(corpus: &[Paragraph]) -> Vec<String> {
    let mut seen = HashSet::new();
    corpus
        .iter()
        .filter(|p| seen.insert(p.label.clone()))
        .map(|p| p.label.clone())
        .collect()
}
