//! Cloze templates, verbalizers and automatic verbalizer selection.

mod petal;
mod template;
mod verbalizer;

use thiserror::Error;

use crate::model::ModelError;

pub use petal::{candidate_pool, petal_scores, petal_select, CandidateFilter};
pub use template::{
    apply_pattern, builtin_templates, parse_templates, templates_to_text, BuiltinTemplates, PatternInput,
    PatternTemplate, Segment,
};
pub use verbalizer::{verbalizer_logits, Verbalizer};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("invalid template {name:?}: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("template {name:?} needs {needed} tokens but only {max} fit")]
    TemplateOverflow { name: String, needed: usize, max: usize },
    #[error("invalid verbalizer: {0}")]
    InvalidVerbalizer(String),
    #[error("candidate pool has {pool} tokens for {classes} classes")]
    PoolTooSmall { pool: usize, classes: usize },
    #[error("no few-shot sample for class {0:?}")]
    MissingClass(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}
