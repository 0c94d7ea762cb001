use thiserror::Error;

use crate::corpus::CorpusError;
use crate::eval::EvalError;
use crate::explain::ExplainError;
use crate::model::ModelError;
use crate::pet::PetError;
use crate::pretrain::PretrainError;
use crate::prompting::PromptError;
use crate::synth::SynthError;

/// Crate-level error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Pet(#[from] PetError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("refusing to overwrite existing output {0} (use --force)")]
    OutputExists(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input data rather than a usage mistake or a bug.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_) | Error::OutputExists(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
