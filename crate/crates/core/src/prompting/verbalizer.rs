use std::collections::BTreeSet;

use super::template::{apply_pattern, PatternTemplate};
use super::PromptError;
use crate::model::{mask_log_probs, ModelCheckpoint, Vocabulary, CONTINUATION};

/// Class → single vocabulary token mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verbalizer {
    classes: Vec<String>,
    words: Vec<String>,
    tokens: Vec<u32>,
}

impl Verbalizer {
    /// Validate `(class, word)` pairs against `vocab`.
    pub fn new<C, W>(pairs: impl IntoIterator<Item = (C, W)>, vocab: &Vocabulary) -> Result<Self, PromptError>
    where
        C: Into<String>,
        W: Into<String>,
    {
        let mut classes = Vec::new();
        let mut words = Vec::new();
        let mut tokens = Vec::new();
        let mut seen_classes = BTreeSet::new();
        let mut seen_tokens = BTreeSet::new();
        for (c, w) in pairs {
            let (c, w) = (c.into(), w.into());
            let id = vocab.id(&w).ok_or_else(|| {
                PromptError::InvalidVerbalizer(format!("token {w:?} for class {c:?} is not in the vocabulary"))
            })?;
            if vocab.is_special(id) || w.starts_with(CONTINUATION) {
                return Err(PromptError::InvalidVerbalizer(format!(
                    "token {w:?} for class {c:?} is not a standalone word token"
                )));
            }
            if !seen_classes.insert(c.clone()) {
                return Err(PromptError::InvalidVerbalizer(format!("class {c:?} mapped twice")));
            }
            if !seen_tokens.insert(id) {
                return Err(PromptError::InvalidVerbalizer(format!(
                    "token {w:?} used for more than one class"
                )));
            }
            classes.push(c);
            words.push(w);
            tokens.push(id);
        }
        if classes.is_empty() {
            return Err(PromptError::InvalidVerbalizer("empty mapping".into()));
        }
        Ok(Self { classes, words, tokens })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn word_for(&self, class: &str) -> Option<&str> {
        self.classes
            .iter()
            .position(|c| c == class)
            .map(|i| self.words[i].as_str())
    }

    /// Same mapping reordered to follow `classes`; every class must be covered.
    pub fn ordered_for(&self, classes: &[String], vocab: &Vocabulary) -> Result<Self, PromptError> {
        let pairs = classes
            .iter()
            .map(|c| {
                self.word_for(c)
                    .map(|w| (c.clone(), w.to_string()))
                    .ok_or_else(|| PromptError::InvalidVerbalizer(format!("class {c:?} is not mapped")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(pairs, vocab)
    }

    /// `class = token` lines.
    pub fn to_text(&self) -> String {
        self.classes
            .iter()
            .zip(&self.words)
            .map(|(c, w)| format!("{c} = {w}\n"))
            .collect()
    }

    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self, PromptError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (c, w) = line.split_once('=').ok_or_else(|| PromptError::Parse {
                line: i + 1,
                reason: "expected `class = token`".into(),
            })?;
            let (c, w) = (c.trim(), w.trim());
            if c.is_empty() || w.is_empty() {
                return Err(PromptError::Parse {
                    line: i + 1,
                    reason: "empty class or token".into(),
                });
            }
            pairs.push((c.to_string(), w.to_string()));
        }
        Self::new(pairs, vocab)
    }
}

/// Log-probability of each class's token at the `[MASK]` position(s), averaged
/// over positions; ordered like `verbalizer.classes()`.
pub fn verbalizer_logits(
    ckpt: &ModelCheckpoint,
    template: &PatternTemplate,
    sample_text: &str,
    verbalizer: &Verbalizer,
) -> Result<Vec<f64>, PromptError> {
    let input = apply_pattern(template, sample_text, &ckpt.vocab, ckpt.config().max_sequence_length)?;
    let per_mask = mask_log_probs(ckpt, &input.ids)?;
    let inv = 1.0 / per_mask.len() as f64;
    Ok(verbalizer
        .tokens
        .iter()
        .map(|&t| per_mask.iter().map(|lp| lp[t as usize]).sum::<f64>() * inv)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["alpha beta gamma"], &[], 100, 1).unwrap()
    }

    #[test]
    fn rejects_bad_mappings() {
        let v = vocab();
        assert!(Verbalizer::new([("a", "alpha"), ("b", "beta")], &v).is_ok());
        assert!(Verbalizer::new([("a", "alpha"), ("b", "alpha")], &v).is_err());
        assert!(Verbalizer::new([("a", "alpha"), ("a", "beta")], &v).is_err());
        assert!(Verbalizer::new([("a", "delta")], &v).is_err());
        assert!(Verbalizer::new([("a", "[MASK]")], &v).is_err());
        assert!(Verbalizer::new([("a", "##a")], &v).is_err());
    }

    #[test]
    fn text_round_trip() {
        let v = vocab();
        let verb = Verbalizer::new([("Befunde", "alpha"), ("Anamnese", "gamma")], &v).unwrap();
        assert_eq!(verb.to_text(), "Befunde = alpha\nAnamnese = gamma\n");
        assert_eq!(Verbalizer::parse(&verb.to_text(), &v).unwrap(), verb);
        assert!(Verbalizer::parse("Befunde alpha", &v).is_err());
    }

    #[test]
    fn reorder_follows_classes() {
        let v = vocab();
        let verb = Verbalizer::new([("b", "beta"), ("a", "alpha")], &v).unwrap();
        let ordered = verb.ordered_for(&["a".into(), "b".into()], &v).unwrap();
        assert_eq!(ordered.words(), &["alpha", "beta"]);
        assert!(verb.ordered_for(&["c".into()], &v).is_err());
    }
}
