//! Few-shot section classification with cloze prompts.
//!
//! The crate bundles everything needed to run pattern-exploiting training
//! (PET) at desk scale: a paragraph corpus model with context enrichment and
//! seeded few-shot bundles, a tiny trainable masked language model, cloze
//! templates with automatic verbalizer selection, the three-step PET pipeline
//! and its baselines, further-pretraining plans, Shapley-value attributions,
//! classification metrics with approximate randomization tests, and a
//! synthetic letter generator that stands in for a real clinical corpus.

pub mod corpus;
pub mod eval;
pub mod experiment;
pub mod explain;
pub mod model;
pub mod pet;
pub mod pretrain;
pub mod prompting;
pub mod synth;
pub mod util;

mod error;

pub use error::{Error, Result};
