//! Tiny masked language model: vocabulary, encoder, checkpoints and training loops.

mod checkpoint;
mod encoder;
mod infer;
pub mod ops;
mod train;
mod vocab;

use thiserror::Error;

pub use checkpoint::{ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{param_layout, Encoder, EncoderConfig, Forward, HeadConfig, ParamEntry, Pooling};
pub use infer::{
    classifier_logits, classify, mask_log_probs, mlm_cross_entropy, predict_mask_distribution, wrap_sequence,
};
pub use train::{
    objective_loss_and_grad, train_classifier_hard, train_classifier_soft, train_mlm, train_objective,
    train_verbalizer, Example, Target, TrainConfig, TrainHistory,
};
pub use vocab::{pre_split, tokenize, Vocabulary, Word, CLS, CONTINUATION, MASK, PAD, SEP, SPECIALS, UNK};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input contains no [MASK] token")]
    NoMaskPresent,
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("model has no {0} head")]
    HeadMissing(&'static str),
    #[error("no training data")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("target {index} is not a distribution (sum {sum})")]
    MalformedTarget { index: usize, sum: f64 },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
