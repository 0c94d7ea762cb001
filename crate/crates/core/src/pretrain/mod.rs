//! Further pretraining: raw-corpus preprocessing and staged MLM plans.

mod preprocess;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    mlm_cross_entropy, tokenize, train_mlm, ModelCheckpoint, ModelError, TrainConfig, TrainHistory, Vocabulary,
};
use crate::prompting::{builtin_templates, Segment};

pub use preprocess::{load_raw_documents, preprocess_raw, split_sentences, training_texts, LabFilter, LETTER_MARKER};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("no corpus named {0:?}")]
    MissingCorpus(String),
    #[error("invalid pretraining plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainStage {
    pub corpus: String,
    pub train: TrainConfig,
}

/// Ordered MLM stages; `public` has none and leaves the base model untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainPlan {
    pub name: String,
    #[serde(default)]
    pub stages: Vec<PretrainStage>,
}

impl PretrainPlan {
    pub fn public() -> Self {
        Self {
            name: "public".into(),
            stages: Vec::new(),
        }
    }

    /// Adapt on the task's own (unlabeled) training text.
    pub fn task(train: TrainConfig) -> Self {
        Self {
            name: "task".into(),
            stages: vec![PretrainStage {
                corpus: "task".into(),
                train,
            }],
        }
    }

    pub fn domain(train: TrainConfig) -> Self {
        Self {
            name: "domain".into(),
            stages: vec![PretrainStage {
                corpus: "domain".into(),
                train,
            }],
        }
    }

    /// Domain stage followed by a task stage.
    pub fn comb(domain: TrainConfig, task: TrainConfig) -> Self {
        Self {
            name: "comb".into(),
            stages: vec![
                PretrainStage {
                    corpus: "domain".into(),
                    train: domain,
                },
                PretrainStage {
                    corpus: "task".into(),
                    train: task,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), PretrainError> {
        if self.name.is_empty() {
            return Err(PretrainError::InvalidPlan("plan needs a name".into()));
        }
        if self.name != "public" && self.stages.is_empty() {
            return Err(PretrainError::InvalidPlan(format!(
                "plan {:?} has no stages",
                self.name
            )));
        }
        for s in &self.stages {
            s.train.validate()?;
        }
        Ok(())
    }
}

/// Result of one pretraining stage.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub corpus: String,
    pub checkpoint: ModelCheckpoint,
    pub history: TrainHistory,
    /// Held-out MLM cross-entropy after the stage, when held-out text was given.
    pub heldout_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub stages: Vec<StageResult>,
    pub base_heldout_loss: Option<f64>,
}

/// Seed used to mask held-out text, so losses of different stages are comparable.
const HELDOUT_MASK_SEED: u64 = 7;

/// Apply each stage's MLM training in order.
///
/// Stage checkpoints are written to `out_dir/stage{i}_{corpus}/checkpoint` when a
/// directory is given.
pub fn run_pretrain_plan(
    base: &ModelCheckpoint,
    plan: &PretrainPlan,
    corpora: &BTreeMap<String, Vec<String>>,
    heldout: Option<&[String]>,
    out_dir: Option<&Path>,
) -> Result<PretrainOutcome, PretrainError> {
    plan.validate()?;
    for s in &plan.stages {
        if !corpora.contains_key(&s.corpus) {
            return Err(PretrainError::MissingCorpus(s.corpus.clone()));
        }
    }
    let heldout_ids: Option<Vec<Vec<u32>>> = heldout.map(|texts| {
        let width = base.config().max_sequence_length - 2;
        texts
            .iter()
            .flat_map(|t| {
                tokenize(t, &base.vocab)
                    .chunks(width)
                    .map(<[u32]>::to_vec)
                    .collect::<Vec<_>>()
            })
            .filter(|w| !w.is_empty())
            .collect()
    });
    let loss_of = |ckpt: &ModelCheckpoint| -> Result<Option<f64>, PretrainError> {
        match &heldout_ids {
            Some(ids) => Ok(Some(mlm_cross_entropy(ckpt, ids, 0.15, HELDOUT_MASK_SEED)?)),
            None => Ok(None),
        }
    };
    let base_heldout_loss = loss_of(base)?;
    if let Some(l) = base_heldout_loss {
        log::info!("plan={} stage=base heldout_loss={l:.5}", plan.name);
    }
    let mut current = base.clone();
    let mut stages = Vec::with_capacity(plan.stages.len());
    for (i, stage) in plan.stages.iter().enumerate() {
        let (next, history) = train_mlm(&current, &corpora[&stage.corpus], &stage.train)?;
        let heldout_loss = loss_of(&next)?;
        log::info!(
            "plan={} stage={} corpus={} final_loss={:.5} heldout_loss={}",
            plan.name,
            i + 1,
            stage.corpus,
            history.epoch_losses.last().copied().unwrap_or(f64::NAN),
            heldout_loss.map_or("na".to_string(), |l| format!("{l:.5}"))
        );
        if let Some(dir) = out_dir {
            next.save(dir.join(format!("stage{}_{}", i + 1, stage.corpus)).join("checkpoint"))?;
        }
        stages.push(StageResult {
            corpus: stage.corpus.clone(),
            checkpoint: next.clone(),
            history,
            heldout_loss,
        });
        current = next;
    }
    Ok(PretrainOutcome {
        checkpoint: current,
        stages,
        base_heldout_loss,
    })
}

/// Frequency-ordered vocabulary over `texts` that also covers the literal words
/// of the built-in templates.
pub fn build_vocabulary<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    max_size: usize,
) -> Result<Vocabulary, PretrainError> {
    let catalogue = builtin_templates();
    let mut extra: Vec<String> = Vec::new();
    for t in catalogue.core.iter().chain(&catalogue.null) {
        for p in t.parts() {
            if let Segment::Text(s) = p {
                for w in crate::model::pre_split(s) {
                    if !extra.contains(&w.text) {
                        extra.push(w.text);
                    }
                }
            }
        }
    }
    let refs: Vec<&str> = extra.iter().map(String::as_str).collect();
    Ok(Vocabulary::build(texts, &refs, max_size, 1)?)
}
