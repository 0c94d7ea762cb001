//! Shapley-value attributions over contiguous token groups.
//!
//! A coalition keeps its groups' tokens and replaces every other group's
//! tokens with the mask token, so sequence length and positions never change.
//! The value of a coalition is the classifier's probability for the target
//! class; the value of the empty coalition is the report's base value.

mod grouping;
mod render;
mod shapley;

pub use grouping::{group_text, FeatureGroup, FeatureGrouping, TextGroups};
pub use render::{context_contribution_ratio, group_colors, render_report, GroupColor, ReportFormat, RATIO_SENTINEL};
pub use shapley::{
    exact_values, sampled_values, shapley_exact, shapley_sampled, AttributionReport, Method, SampledValues,
    MAX_EXACT_GROUPS, MAX_SAMPLED_GROUPS,
};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("{n} groups exceed the limit of {max} for this method")]
    TooManyGroups { n: usize, max: usize },
    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("report serialization failed: {0}")]
    Serialization(String),
}

/// One group entry of the JSONL report record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub phi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

/// Serialized form of an [`AttributionReport`], one per JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub sample_id: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_permutations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_label: Option<String>,
    pub base_value: f64,
    pub predicted: Vec<f64>,
    pub groups: Vec<GroupRecord>,
}

impl From<&AttributionReport> for ReportRecord {
    fn from(r: &AttributionReport) -> Self {
        let (method, n_permutations, seed) = match r.method {
            Method::Exact => ("exact", None, None),
            Method::Sampled { n_permutations, seed } => ("sampled", Some(n_permutations), Some(seed)),
        };
        ReportRecord {
            sample_id: r.sample_id.clone(),
            method: method.to_string(),
            n_permutations,
            seed,
            target: r.target,
            target_label: r.target_label.clone(),
            base_value: r.base_value,
            predicted: r.predicted.clone(),
            groups: r
                .groups
                .iter()
                .enumerate()
                .map(|(i, g)| GroupRecord {
                    text: g.text.clone(),
                    start: g.start,
                    end: g.end,
                    phi: r.phi[i],
                    stderr: r.stderr.as_ref().map(|s| s[i]),
                })
                .collect(),
        }
    }
}

impl TryFrom<ReportRecord> for AttributionReport {
    type Error = ExplainError;

    fn try_from(rec: ReportRecord) -> Result<Self, ExplainError> {
        let method = match rec.method.as_str() {
            "exact" => Method::Exact,
            "sampled" => Method::Sampled {
                n_permutations: rec.n_permutations.unwrap_or(0),
                seed: rec.seed.unwrap_or(0),
            },
            other => return Err(ExplainError::Serialization(format!("unknown method {other:?}"))),
        };
        let stderr = if rec.groups.iter().all(|g| g.stderr.is_some()) && !rec.groups.is_empty() {
            Some(rec.groups.iter().map(|g| g.stderr.unwrap_or(0.0)).collect())
        } else {
            None
        };
        Ok(AttributionReport {
            sample_id: rec.sample_id,
            target: rec.target,
            target_label: rec.target_label,
            base_value: rec.base_value,
            phi: rec.groups.iter().map(|g| g.phi).collect(),
            stderr,
            groups: rec
                .groups
                .into_iter()
                .map(|g| FeatureGroup {
                    text: g.text,
                    start: g.start,
                    end: g.end,
                })
                .collect(),
            predicted: rec.predicted,
            predicted_label: None,
            method,
        })
    }
}

/// Write reports as JSONL, one record per line.
pub fn write_jsonl<W: Write>(mut out: W, reports: &[AttributionReport]) -> Result<(), ExplainError> {
    for r in reports {
        let line =
            serde_json::to_string(&ReportRecord::from(r)).map_err(|e| ExplainError::Serialization(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| ExplainError::Serialization(e.to_string()))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<AttributionReport>, ExplainError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| ExplainError::Serialization(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReportRecord = serde_json::from_str(&line).map_err(|e| ExplainError::Serialization(e.to_string()))?;
        out.push(AttributionReport::try_from(rec)?);
    }
    Ok(out)
}
