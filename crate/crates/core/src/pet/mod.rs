//! The three-step PET pipeline and the supervised / zero-shot baselines.

mod baselines;
mod pipeline;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalError;
use crate::model::{ModelError, TrainConfig, Vocabulary};
use crate::prompting::{builtin_templates, CandidateFilter, PatternTemplate, PromptError};

pub use baselines::{encode_text, evaluate_classifier, predict_classes, run_sc, run_zero_shot, zero_shot_predict};
pub use pipeline::{
    distill_targets, pet_step1_finetune, pet_step2_soft_label, pet_step3_distill, run_pet, PetOutcome, SoftLabelSet,
    TemplateModel,
};

#[derive(Debug, Error)]
pub enum PetError {
    #[error("invalid PET configuration: {0}")]
    InvalidConfig(String),
    #[error("no labeled samples")]
    EmptyLabeled,
    #[error("no unlabeled samples to annotate")]
    EmptyUnlabeled,
    #[error("sample {0} has no label")]
    MissingLabel(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbalizerMode {
    /// Automatic search over frequent unlabeled-data tokens.
    Petal,
    /// User-supplied `manual_verbalizer`.
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleWeighting {
    Uniform,
    /// Weight each template model by its accuracy on its own labeled set.
    TrainAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PetConfig {
    pub templates: Vec<PatternTemplate>,
    pub verbalizer_mode: VerbalizerMode,
    /// Class → token, required for `manual` mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manual_verbalizer: Option<BTreeMap<String, String>>,
    /// Search one verbalizer with the first template and reuse it for all.
    pub shared_verbalizer: bool,
    pub candidate_filter: CandidateFilter,
    pub ensemble_weighting: EnsembleWeighting,
    pub distill_temperature: f64,
    /// Add the labeled shots to the distillation set as one-hot targets.
    pub include_labeled: bool,
    /// Cap on unlabeled samples annotated in step 2 (random subset when exceeded).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_unlabeled: Option<usize>,
    /// Step-1 (per-template) fine-tuning.
    pub train: TrainConfig,
    /// Step-3 distillation; defaults to `train` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distill: Option<TrainConfig>,
}

impl Default for PetConfig {
    fn default() -> Self {
        Self {
            templates: builtin_templates().core,
            verbalizer_mode: VerbalizerMode::Petal,
            manual_verbalizer: None,
            shared_verbalizer: false,
            candidate_filter: CandidateFilter::default(),
            ensemble_weighting: EnsembleWeighting::Uniform,
            distill_temperature: 2.0,
            include_labeled: true,
            max_unlabeled: None,
            train: TrainConfig::default(),
            distill: None,
        }
    }
}

impl PetConfig {
    pub fn validate(&self) -> Result<(), PetError> {
        if self.templates.is_empty() {
            return Err(PetError::InvalidConfig("at least one template is required".into()));
        }
        let mut names: Vec<&str> = self.templates.iter().map(|t| t.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(PetError::InvalidConfig("template names must be unique".into()));
        }
        if !(self.distill_temperature > 0.0 && self.distill_temperature.is_finite()) {
            return Err(PetError::InvalidConfig("distill_temperature must be positive".into()));
        }
        if self.verbalizer_mode == VerbalizerMode::Manual && self.manual_verbalizer.is_none() {
            return Err(PetError::InvalidConfig(
                "manual verbalizer mode needs manual_verbalizer".into(),
            ));
        }
        if self.max_unlabeled == Some(0) {
            return Err(PetError::InvalidConfig("max_unlabeled must be positive".into()));
        }
        self.train.validate()?;
        self.distill_config().validate()?;
        Ok(())
    }

    pub fn distill_config(&self) -> TrainConfig {
        self.distill.clone().unwrap_or_else(|| self.train.clone())
    }

    /// Build the manual verbalizer for `classes`, if configured.
    pub fn manual(
        &self,
        classes: &[String],
        vocab: &Vocabulary,
    ) -> Result<Option<crate::prompting::Verbalizer>, PetError> {
        let Some(map) = &self.manual_verbalizer else {
            return Ok(None);
        };
        let pairs = classes
            .iter()
            .map(|c| {
                map.get(c)
                    .map(|w| (c.clone(), w.clone()))
                    .ok_or_else(|| PetError::InvalidConfig(format!("manual verbalizer misses class {c:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(crate::prompting::Verbalizer::new(pairs, vocab)?))
    }
}
